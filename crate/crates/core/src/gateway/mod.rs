//! Chat-completions client used to sample reasoning chains and to judge step
//! equivalence.
//!
//! Two backends sit behind [`ChatBackend`]: [`HttpBackend`] talks to any
//! OpenAI-compatible `POST {base_url}/v1/chat/completions` endpoint, and
//! [`FixtureBackend`] replays recorded exchanges from a directory without
//! touching the network. [`Gateway`] adds the in-flight bound, the prompt
//! rendering and the reply parsing on top of either.

mod fixture;
mod http;
pub mod prompts;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chain::{QuestionRecord, RecordError, Step};
pub use fixture::{write_fixture, FixtureBackend};
pub use http::HttpBackend;
use prompts::{parse_completion, parse_judge_reply, GenerationPrompt, JudgeVerdict, ParsedCompletion};

/// Environment variable holding the bearer token for live mode.
pub const API_KEY_ENV: &str = "REASONGRAPH_API_KEY";

pub const DEFAULT_GENERATION_TEMPERATURE: f64 = 1.0;
pub const JUDGE_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Response(String),
    #[error("no fixture for request {key} in {dir}")]
    MissingFixture { key: String, dir: PathBuf },
    #[error("fixture {path}: {message}")]
    Fixture { path: PathBuf, message: String },
    #[error("none of the {requested} sampled completions could be parsed")]
    NoParseableCompletions { requested: usize },
    #[error("gateway misconfigured: {0}")]
    Config(String),
    #[error(transparent)]
    Record(#[from] RecordError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    /// Distinguishes repeated samples of the same prompt. Not sent over the
    /// wire; fixtures are keyed on it.
    pub sample_slot: u32,
}

impl ChatRequest {
    /// Content of the final user turn.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }

    /// Hex SHA-256 over the serialized messages, temperature and sample slot.
    pub fn fixture_key(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.messages).expect("messages serialize"));
        hasher.update([0x1f]);
        hasher.update(format!("{}", self.temperature).as_bytes());
        hasher.update([0x1f]);
        hasher.update(self.sample_slot.to_string().as_bytes());
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One prompt/reply pair, kept verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub prompt: String,
    pub reply: String,
    #[serde(default)]
    pub usage: Option<TokenUsage>,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    #[default]
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub base_url: String,
    pub model_name: String,
    /// Sampling temperature for chain generation. Judging always runs at 0.
    pub temperature: f64,
    pub max_in_flight: usize,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub mode: GatewayMode,
    pub fixture_dir: Option<PathBuf>,
    /// When set, every live exchange is also written here as a fixture.
    pub record_dir: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000".to_string(),
            model_name: "meta-llama/Llama-3.1-8B-Instruct".to_string(),
            temperature: DEFAULT_GENERATION_TEMPERATURE,
            max_in_flight: 8,
            timeout: Duration::from_secs(120),
            mode: GatewayMode::Fixture,
            fixture_dir: None,
            record_dir: None,
        }
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Counting semaphore bounding concurrent backend calls.
struct InFlightLimiter {
    max: usize,
    active: Mutex<usize>,
    released: Condvar,
}

struct Permit<'a>(&'a InFlightLimiter);

impl InFlightLimiter {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            active: Mutex::new(0),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.max {
            active = self.released.wait(active).unwrap();
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap() -= 1;
        self.0.released.notify_one();
    }
}

#[derive(Debug, Default)]
pub struct GatewayMetrics {
    pub requests: AtomicU64,
    pub dropped_completions: AtomicU64,
    pub rejected_verdicts: AtomicU64,
}

/// Chains sampled for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledChains {
    pub chains: Vec<ParsedCompletion>,
    pub requested: usize,
    /// Completions still unparseable after one retry.
    pub dropped: usize,
}

impl SampledChains {
    pub fn into_record(
        self,
        question_id: impl Into<String>,
        question: impl Into<String>,
        gold_answer: Option<String>,
    ) -> Result<QuestionRecord, RecordError> {
        QuestionRecord::new(
            question_id,
            question,
            gold_answer,
            self.chains.into_iter().map(|c| (c.steps, c.answer)),
        )
    }
}

pub struct Gateway {
    config: GatewayConfig,
    backend: Box<dyn ChatBackend>,
    limiter: InFlightLimiter,
    generation: GenerationPrompt,
    metrics: GatewayMetrics,
}

impl Gateway {
    /// Builds the backend named by `config.mode`.
    pub fn from_config(config: GatewayConfig) -> Result<Self, GatewayError> {
        let backend: Box<dyn ChatBackend> = match config.mode {
            GatewayMode::Fixture => {
                let dir = config.fixture_dir.clone().ok_or_else(|| {
                    GatewayError::Config("fixture mode requires fixture_dir".into())
                })?;
                Box::new(FixtureBackend::new(dir))
            }
            GatewayMode::Live => {
                let api_key = std::env::var(API_KEY_ENV).ok();
                let http = HttpBackend::new(&config, api_key)?;
                match &config.record_dir {
                    Some(dir) => Box::new(fixture::Recording::new(http, dir.clone())),
                    None => Box::new(http),
                }
            }
        };
        Ok(Self::with_backend(config, backend))
    }

    pub fn with_backend(config: GatewayConfig, backend: Box<dyn ChatBackend>) -> Self {
        Self {
            limiter: InFlightLimiter::new(config.max_in_flight),
            config,
            backend,
            generation: GenerationPrompt::default(),
            metrics: GatewayMetrics::default(),
        }
    }

    pub fn with_generation_prompt(mut self, prompt: GenerationPrompt) -> Self {
        self.generation = prompt;
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn metrics(&self) -> &GatewayMetrics {
        &self.metrics
    }

    /// Sends one request, waiting for an in-flight slot first.
    pub fn chat(&self, request: &ChatRequest) -> Result<ChatExchange, GatewayError> {
        let _permit = self.limiter.acquire();
        self.metrics.requests.fetch_add(1, Ordering::Relaxed);
        self.backend.complete(request)
    }

    /// The request issued for sample `slot` of `question`. Retries use slot
    /// `n + i` for sample `i`.
    pub fn generation_request(&self, question: &str, slot: u32) -> ChatRequest {
        ChatRequest {
            messages: self.generation.render(question),
            temperature: self.config.temperature,
            sample_slot: slot,
        }
    }

    pub fn judge_request(&self, target: &Step, path: &[Step]) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::new(
                Role::User,
                prompts::render_equivalence_steps(target, path),
            )],
            temperature: JUDGE_TEMPERATURE,
            sample_slot: 0,
        }
    }

    /// Issues `n` independent completions (concurrently, within the in-flight
    /// bound) and parses each into steps and an answer. A completion that does
    /// not parse is retried once and then dropped.
    pub fn sample_chains(&self, question: &str, n: usize) -> Result<SampledChains, GatewayError> {
        if n == 0 {
            return Err(GatewayError::Config("sample count must be at least 1".into()));
        }
        let outcomes: Vec<Result<Option<ParsedCompletion>, GatewayError>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..n)
                    .map(|i| scope.spawn(move || self.sample_one(question, i as u32, n as u32)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("sampling thread panicked"))
                    .collect()
            });

        let mut chains = Vec::with_capacity(n);
        let mut dropped = 0;
        for outcome in outcomes {
            match outcome? {
                Some(parsed) => chains.push(parsed),
                None => dropped += 1,
            }
        }
        if chains.is_empty() {
            return Err(GatewayError::NoParseableCompletions { requested: n });
        }
        Ok(SampledChains {
            chains,
            requested: n,
            dropped,
        })
    }

    fn sample_one(
        &self,
        question: &str,
        index: u32,
        n: u32,
    ) -> Result<Option<ParsedCompletion>, GatewayError> {
        for slot in [index, n + index] {
            let exchange = self.chat(&self.generation_request(question, slot))?;
            if let Some(parsed) = parse_completion(&exchange.reply) {
                return Ok(Some(parsed));
            }
            log::warn!("sample {index}: completion in slot {slot} did not parse");
        }
        self.metrics.dropped_completions.fetch_add(1, Ordering::Relaxed);
        Ok(None)
    }

    /// Asks the judge which step of `path` (1-based) is equivalent to
    /// `target`. Out-of-range or unparseable replies count as no match.
    pub fn judge_equivalence(
        &self,
        target: &Step,
        path: &[Step],
    ) -> Result<Option<usize>, GatewayError> {
        if path.is_empty() {
            return Ok(None);
        }
        let exchange = self.chat(&self.judge_request(target, path))?;
        let verdict = parse_judge_reply(&exchange.reply, path.len());
        match verdict {
            JudgeVerdict::OutOfRange(_) | JudgeVerdict::Unparseable => {
                self.metrics.rejected_verdicts.fetch_add(1, Ordering::Relaxed);
                log::warn!(
                    "judge reply {:?} for step {} rejected ({verdict:?}); treating as none",
                    exchange.reply,
                    target.id()
                );
            }
            _ => {}
        }
        Ok(verdict.index())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::QuestionRecord;
    use std::collections::HashMap;
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    /// Replies from a fixed table keyed by sample slot and tracks concurrency.
    struct Scripted {
        replies: HashMap<u32, String>,
        current: AtomicUsize,
        peak: Arc<AtomicUsize>,
        delay: Duration,
    }

    impl ChatBackend for Scripted {
        fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, GatewayError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(self.delay);
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(ChatExchange {
                prompt: request.prompt().to_string(),
                reply: self
                    .replies
                    .get(&request.sample_slot)
                    .cloned()
                    .unwrap_or_default(),
                usage: None,
            })
        }
    }

    fn scripted(replies: &[(u32, &str)], max_in_flight: usize) -> (Gateway, Arc<AtomicUsize>) {
        let peak = Arc::new(AtomicUsize::new(0));
        let backend = Scripted {
            replies: replies.iter().map(|(k, v)| (*k, v.to_string())).collect(),
            current: AtomicUsize::new(0),
            peak: peak.clone(),
            delay: Duration::from_millis(5),
        };
        let config = GatewayConfig {
            max_in_flight,
            ..GatewayConfig::default()
        };
        (Gateway::with_backend(config, Box::new(backend)), peak)
    }

    #[test]
    fn in_flight_bound_is_respected() {
        let replies: Vec<(u32, String)> = (0..24)
            .map(|i| (i, format!("Step 1: x\nFinal Answer: \\boxed{{{i}}}")))
            .collect();
        let refs: Vec<(u32, &str)> = replies.iter().map(|(k, v)| (*k, v.as_str())).collect();
        let (gateway, peak) = scripted(&refs, 3);
        let sampled = gateway.sample_chains("q", 24).unwrap();
        assert_eq!(sampled.chains.len(), 24);
        let peak = peak.load(Ordering::SeqCst);
        assert!(peak <= 3, "peak in-flight {peak}");
        assert!(peak >= 2, "requests were not issued concurrently");
    }

    #[test]
    fn unparseable_completion_is_retried_then_dropped() {
        // sample 0 fails then succeeds on retry (slot 3); sample 1 fails twice.
        let (gateway, _) = scripted(
            &[
                (0, "no structure"),
                (3, "Step 1: a\nFinal Answer: \\boxed{1}"),
                (1, "Step 1: b"),
                (4, "still nothing"),
                (2, "Step 1: c\nStep 2: d\nFinal Answer: \\boxed{2}"),
            ],
            4,
        );
        let sampled = gateway.sample_chains("q", 3).unwrap();
        assert_eq!(sampled.dropped, 1);
        assert_eq!(sampled.chains.len(), 2);
        assert_eq!(sampled.chains[0].answer, "1");
        assert_eq!(sampled.chains[1].steps.len(), 2);
        assert_eq!(gateway.metrics().requests.load(Ordering::Relaxed), 5);

        let record = sampled.into_record("q1", "q", Some("2".into())).unwrap();
        assert_eq!(record.n(), 2);
    }

    #[test]
    fn all_unparseable_is_an_error() {
        let (gateway, _) = scripted(&[], 2);
        assert!(matches!(
            gateway.sample_chains("q", 2),
            Err(GatewayError::NoParseableCompletions { requested: 2 })
        ));
    }

    #[test]
    fn judge_verdicts() {
        let record = QuestionRecord::new(
            "q",
            "",
            None,
            vec![
                (vec!["a"], "1"),
                (vec!["b", "c", "d", "e", "f", "g", "h"], "1"),
            ],
        )
        .unwrap();
        let target = &record.chains()[0].steps()[0];
        let path = record.chains()[1].steps();
        for (reply, expected) in [("5", Some(5)), ("none", None), ("Step 3", None), ("9", None)] {
            let (gateway, _) = scripted(&[(0, reply)], 1);
            assert_eq!(gateway.judge_equivalence(target, path).unwrap(), expected, "{reply}");
        }
        let (gateway, _) = scripted(&[(0, "Step 3")], 1);
        gateway.judge_equivalence(target, path).unwrap();
        assert_eq!(gateway.metrics().rejected_verdicts.load(Ordering::Relaxed), 1);
    }

    #[test]
    fn judge_request_runs_at_zero_temperature() {
        let (gateway, _) = scripted(&[], 1);
        let record = QuestionRecord::new("q", "", None, vec![(vec!["a"], "1"), (vec!["b"], "1")]).unwrap();
        let req = gateway.judge_request(&record.chains()[0].steps()[0], record.chains()[1].steps());
        assert_eq!(req.temperature, 0.0);
        assert_eq!(gateway.generation_request("q", 0).temperature, 1.0);
    }

    #[test]
    fn fixture_keys_separate_slots_and_prompts() {
        let (gateway, _) = scripted(&[], 1);
        let a = gateway.generation_request("q", 0).fixture_key();
        assert_eq!(a, gateway.generation_request("q", 0).fixture_key());
        assert_ne!(a, gateway.generation_request("q", 1).fixture_key());
        assert_ne!(a, gateway.generation_request("r", 0).fixture_key());
    }
}
