//! Prompt templates and the parsers for the replies they ask for.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChatMessage, Role};
use crate::chain::{strip_boxed, Step};

pub const GENERATION_TEMPLATE: &str = include_str!("../../assets/prompts/generation.txt");
pub const EQUIVALENCE_TEMPLATE: &str = include_str!("../../assets/prompts/equivalence.txt");
pub const REFLECTION_TEMPLATE: &str = include_str!("../../assets/prompts/reflection.txt");

/// Bumped whenever `EQUIVALENCE_TEMPLATE` or its rendering changes; part of
/// every judge cache key.
pub const EQUIVALENCE_PROMPT_VERSION: &str = "equivalence-v1";

/// A worked example shown to the model before the real question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub question: String,
    pub response: String,
}

/// Builds chain-sampling conversations: optional few-shot turns followed by
/// the generation template for the target question.
#[derive(Debug, Clone, Default)]
pub struct GenerationPrompt {
    exemplars: Vec<Exemplar>,
}

impl GenerationPrompt {
    pub fn with_exemplars(exemplars: Vec<Exemplar>) -> Self {
        Self { exemplars }
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    pub fn render(&self, question: &str) -> Vec<ChatMessage> {
        let mut messages = Vec::with_capacity(2 * self.exemplars.len() + 1);
        for ex in &self.exemplars {
            messages.push(ChatMessage::new(Role::User, render_generation(&ex.question)));
            messages.push(ChatMessage::new(Role::Assistant, ex.response.clone()));
        }
        messages.push(ChatMessage::new(Role::User, render_generation(question)));
        messages
    }
}

pub fn render_generation(question: &str) -> String {
    GENERATION_TEMPLATE.replace("{question}", question)
}

pub fn render_reflection(question: &str, earlier_response: &str) -> String {
    REFLECTION_TEMPLATE
        .replace("{question}", question)
        .replace("{model's earlier response}", earlier_response)
}

/// Renders the equivalence prompt for one target step against a whole path.
pub fn render_equivalence(target: &str, path: &[&str]) -> String {
    let listing: String = path
        .iter()
        .enumerate()
        .map(|(i, text)| format!("\nStep {}: {}", i + 1, text.trim()))
        .collect();
    EQUIVALENCE_TEMPLATE
        .replace("{A Step in Path A}", target.trim())
        .replace("{All Steps in Path B}", &listing)
}

pub fn render_equivalence_steps(target: &Step, path: &[Step]) -> String {
    let texts: Vec<&str> = path.iter().map(Step::text).collect();
    render_equivalence(target.text(), &texts)
}

/// A completion split into step texts and the final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCompletion {
    pub steps: Vec<String>,
    pub answer: String,
}

fn step_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bstep\s+\d+\s*:").unwrap())
}

fn final_answer_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)final\s+answer\s*:").unwrap())
}

fn thought_label() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^thought\s*:").unwrap())
}

/// Extracts the content of the first balanced `\boxed{...}` in `s`.
fn first_boxed(s: &str) -> Option<&str> {
    let start = s.find("\\boxed{")?;
    let tail = &s[start..];
    let mut depth = 0usize;
    for (i, c) in tail.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return strip_boxed(&tail[..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses a reply to the generation prompt. Returns `None` when there is no
/// `Final Answer:` marker, no non-empty answer, or no `Step N:` section.
pub fn parse_completion(text: &str) -> Option<ParsedCompletion> {
    let marker = final_answer_marker().find_iter(text).last()?;
    let after = &text[marker.end()..];
    let answer = match first_boxed(after) {
        Some(inner) => inner.trim().to_string(),
        None => after.lines().next().unwrap_or("").trim().to_string(),
    };
    if answer.is_empty() {
        return None;
    }

    let body = &text[..marker.start()];
    let starts: Vec<_> = step_marker().find_iter(body).collect();
    let mut steps = Vec::with_capacity(starts.len());
    for (i, m) in starts.iter().enumerate() {
        let end = starts.get(i + 1).map_or(body.len(), |next| next.start());
        let segment = body[m.end()..end].trim();
        let segment = thought_label().replace(segment, "");
        let segment = segment.trim();
        if !segment.is_empty() {
            steps.push(segment.to_string());
        }
    }
    if steps.is_empty() {
        return None;
    }
    Some(ParsedCompletion { steps, answer })
}

/// Interpretation of a judge reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JudgeVerdict {
    /// 1-based position in the candidate path.
    Match(usize),
    NoMatch,
    OutOfRange(i64),
    Unparseable,
}

impl JudgeVerdict {
    pub fn index(self) -> Option<usize> {
        match self {
            JudgeVerdict::Match(i) => Some(i),
            _ => None,
        }
    }
}

/// Strict parse: a bare integer in `1..=path_len` or `none`, case-insensitive,
/// optionally wrapped in one pair of double quotes.
pub fn parse_judge_reply(reply: &str, path_len: usize) -> JudgeVerdict {
    let trimmed = reply.trim();
    let trimmed = trimmed
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(trimmed)
        .trim();
    if trimmed.eq_ignore_ascii_case("none") {
        return JudgeVerdict::NoMatch;
    }
    match trimmed.parse::<i64>() {
        Ok(n) if n >= 1 && (n as u64) <= path_len as u64 => JudgeVerdict::Match(n as usize),
        Ok(n) => JudgeVerdict::OutOfRange(n),
        Err(_) => JudgeVerdict::Unparseable,
    }
}
