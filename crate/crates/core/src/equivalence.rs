//! Cross-chain step equivalence.
//!
//! Matching is one target step against one whole candidate chain, returning
//! at most one position in that chain. [`build_equivalence_set`] runs every
//! (target chain, candidate chain) combination and symmetrizes the result into
//! unordered [`EquivalencePair`]s. No transitive closure happens here.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chain::{QuestionRecord, Step, StepId};
use crate::gateway::prompts::EQUIVALENCE_PROMPT_VERSION;
use crate::gateway::{Gateway, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchSource {
    Exact,
    Normalized,
    Judge,
}

/// Two equivalent steps from different chains, stored with `left < right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EquivalencePair {
    pub left: StepId,
    pub right: StepId,
    pub source: MatchSource,
}

impl EquivalencePair {
    /// Orders the endpoints. Returns `None` for same-chain pairs.
    pub fn new(a: StepId, b: StepId, source: MatchSource) -> Option<Self> {
        if a.chain == b.chain {
            return None;
        }
        let (left, right) = if a < b { (a, b) } else { (b, a) };
        Some(Self { left, right, source })
    }

    pub fn endpoints(&self) -> (StepId, StepId) {
        (self.left, self.right)
    }
}

#[derive(Debug, Error)]
pub enum EquivalenceError {
    #[error("candidates for step {target} must all come from one other chain")]
    BadCandidates { target: StepId },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// A strategy deciding which step of a candidate chain matches a target step.
pub trait StepMatcher: Sync {
    fn source(&self) -> MatchSource;

    /// 1-based position in `candidates` of the equivalent step, if any.
    fn find_equivalent(
        &self,
        target: &Step,
        candidates: &[Step],
    ) -> Result<Option<usize>, EquivalenceError>;
}

fn check_candidates(target: &Step, candidates: &[Step]) -> Result<(), EquivalenceError> {
    let Some(first) = candidates.first() else {
        return Ok(());
    };
    let chain = first.chain_index();
    if chain == target.chain_index() || candidates.iter().any(|c| c.chain_index() != chain) {
        return Err(EquivalenceError::BadCandidates { target: target.id() });
    }
    Ok(())
}

fn first_match(
    target: &Step,
    candidates: &[Step],
    key: impl Fn(&str) -> String,
) -> Result<Option<usize>, EquivalenceError> {
    check_candidates(target, candidates)?;
    let wanted = key(target.text());
    Ok(candidates
        .iter()
        .position(|c| key(c.text()) == wanted)
        .map(|i| i + 1))
}

/// Identical text after trimming.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatcher;

impl StepMatcher for ExactMatcher {
    fn source(&self) -> MatchSource {
        MatchSource::Exact
    }

    fn find_equivalent(&self, target: &Step, candidates: &[Step]) -> Result<Option<usize>, EquivalenceError> {
        first_match(target, candidates, |s| s.trim().to_string())
    }
}

/// Identical text after case folding and whitespace collapsing. A candidate
/// whose trimmed text is identical to the target is preferred over an earlier
/// one that only matches after normalization.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizedMatcher;

pub fn normalize_step_text(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl StepMatcher for NormalizedMatcher {
    fn source(&self) -> MatchSource {
        MatchSource::Normalized
    }

    fn find_equivalent(&self, target: &Step, candidates: &[Step]) -> Result<Option<usize>, EquivalenceError> {
        match ExactMatcher.find_equivalent(target, candidates)? {
            Some(pos) => Ok(Some(pos)),
            None => first_match(target, candidates, normalize_step_text),
        }
    }
}

/// Delegates to an LLM judge through the gateway, consulting `cache` first.
pub struct JudgeMatcher<'a> {
    gateway: &'a Gateway,
    cache: Option<&'a JudgeCache>,
}

impl<'a> JudgeMatcher<'a> {
    pub fn new(gateway: &'a Gateway, cache: Option<&'a JudgeCache>) -> Self {
        Self { gateway, cache }
    }
}

impl StepMatcher for JudgeMatcher<'_> {
    fn source(&self) -> MatchSource {
        MatchSource::Judge
    }

    fn find_equivalent(&self, target: &Step, candidates: &[Step]) -> Result<Option<usize>, EquivalenceError> {
        check_candidates(target, candidates)?;
        if candidates.is_empty() {
            return Ok(None);
        }
        let key = self.cache.map(|_| {
            let texts: Vec<&str> = candidates.iter().map(Step::text).collect();
            JudgeCache::key(target.text(), &texts, EQUIVALENCE_PROMPT_VERSION)
        });
        if let (Some(cache), Some(key)) = (self.cache, key.as_deref()) {
            if let Some(verdict) = cache.get(key) {
                return Ok(verdict);
            }
        }
        let verdict = self.gateway.judge_equivalence(target, candidates)?;
        if let (Some(cache), Some(key)) = (self.cache, key) {
            if let Err(e) = cache.put(key, verdict, EQUIVALENCE_PROMPT_VERSION) {
                log::warn!("judge cache write failed: {e}");
            }
        }
        Ok(verdict)
    }
}

/// Runs `matcher` for every step against every other chain and returns the
/// deduplicated pairs in discovery order (target chain, target step, then
/// candidate chain).
pub fn build_equivalence_set(
    record: &QuestionRecord,
    matcher: &dyn StepMatcher,
) -> Result<Vec<EquivalencePair>, EquivalenceError> {
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for chain in record.chains() {
        for target in chain.steps() {
            for other in record.chains() {
                if other.chain_index() == chain.chain_index() {
                    continue;
                }
                let Some(pos) = matcher.find_equivalent(target, other.steps())? else {
                    continue;
                };
                let matched = StepId::new(other.chain_index(), pos);
                let pair = EquivalencePair::new(target.id(), matched, matcher.source())
                    .expect("chains differ");
                if seen.insert(pair.endpoints()) {
                    pairs.push(pair);
                }
            }
        }
    }
    Ok(pairs)
}

/// A judge verdict: `Some(position)` or `None` for no match.
pub type Verdict = Option<usize>;

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    verdict: Verdict,
    prompt_version: String,
}

/// Judge verdicts keyed by a hash of the target text, the candidate texts and
/// the prompt version. Backed by an append-only JSONL file when opened from a
/// path.
pub struct JudgeCache {
    entries: RwLock<HashMap<String, Verdict>>,
    sink: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl JudgeCache {
    pub fn in_memory() -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
            sink: None,
            path: None,
        }
    }

    /// Loads `path` (creating it if absent). A file with any unreadable line
    /// is discarded and started afresh.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        let mut corrupt = false;
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = match line {
                    Ok(l) => l,
                    Err(_) => {
                        corrupt = true;
                        break;
                    }
                };
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.key, entry.verdict);
                    }
                    Err(_) => {
                        corrupt = true;
                        break;
                    }
                }
            }
        }
        let file = if corrupt {
            log::warn!("judge cache {} is corrupt; rebuilding it empty", path.display());
            entries.clear();
            File::create(&path)?
        } else {
            OpenOptions::new().create(true).append(true).open(&path)?
        };
        Ok(Self {
            entries: RwLock::new(entries),
            sink: Some(Mutex::new(file)),
            path: Some(path),
        })
    }

    pub fn key(target: &str, candidates: &[&str], prompt_version: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(prompt_version.as_bytes());
        hasher.update([0x1f]);
        hasher.update(target.as_bytes());
        for c in candidates {
            hasher.update([0x1e]);
            hasher.update(c.as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// `None` on a miss; `Some(verdict)` on a hit.
    pub fn get(&self, key: &str) -> Option<Verdict> {
        self.entries.read().unwrap().get(key).copied()
    }

    pub fn put(&self, key: String, verdict: Verdict, prompt_version: &str) -> std::io::Result<()> {
        if let Some(sink) = &self.sink {
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                verdict,
                prompt_version: prompt_version.to_string(),
            })?;
            let mut file = sink.lock().unwrap();
            writeln!(file, "{line}")?;
            file.flush()?;
        }
        self.entries.write().unwrap().insert(key, verdict);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }
}
