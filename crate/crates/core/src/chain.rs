//! Questions, sampled reasoning chains, and answer canonicalization.
//!
//! A dataset is line-delimited JSON, one question per line:
//!
//! ```text
//! {"question_id": "q1", "question": "...", "gold_answer": "4",
//!  "chains": [{"steps": ["...", "..."], "answer": "4"}, ...]}
//! ```
//!
//! Chain and step indices are 1-based and assigned from input order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifies one step inside a question: `(chain_index, step_index)`, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StepId {
    pub chain: usize,
    pub step: usize,
}

impl StepId {
    pub fn new(chain: usize, step: usize) -> Self {
        Self { chain, step }
    }
}

impl std::fmt::Display for StepId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s{}_{}", self.chain, self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    id: StepId,
    text: String,
}

impl Step {
    pub fn id(&self) -> StepId {
        self.id
    }

    pub fn chain_index(&self) -> usize {
        self.id.chain
    }

    pub fn step_index(&self) -> usize {
        self.id.step
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasoningChain {
    chain_index: usize,
    steps: Vec<Step>,
    answer_text: String,
}

impl ReasoningChain {
    pub fn chain_index(&self) -> usize {
        self.chain_index
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn answer_text(&self) -> &str {
        &self.answer_text
    }

    /// Canonical form of this chain's final answer.
    pub fn answer_key(&self) -> String {
        canonicalize_answer(&self.answer_text)
    }

    pub fn last_step(&self) -> &Step {
        self.steps.last().expect("chains have at least one step")
    }
}

/// Why a question could not be assembled from its raw parts.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("question has no chains")]
    NoChains,
    #[error("chain {chain} has no steps")]
    EmptyChain { chain: usize },
    #[error("chain {chain}, step {step} is blank")]
    BlankStep { chain: usize, step: usize },
    #[error("chain {chain} has a blank answer")]
    BlankAnswer { chain: usize },
}

/// One question with its N sampled chains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionRecord {
    question_id: String,
    question_text: String,
    chains: Vec<ReasoningChain>,
    gold_answer: Option<String>,
}

impl QuestionRecord {
    /// Builds a record from raw `(steps, answer)` pairs, numbering chains and
    /// steps from 1.
    pub fn new<S, I>(
        question_id: impl Into<String>,
        question_text: impl Into<String>,
        gold_answer: Option<String>,
        chains: I,
    ) -> Result<Self, RecordError>
    where
        I: IntoIterator<Item = (Vec<S>, S)>,
        S: Into<String>,
    {
        let mut built = Vec::new();
        for (i, (steps, answer)) in chains.into_iter().enumerate() {
            let chain_index = i + 1;
            let steps: Vec<Step> = steps
                .into_iter()
                .enumerate()
                .map(|(j, text)| Step {
                    id: StepId::new(chain_index, j + 1),
                    text: text.into(),
                })
                .collect();
            if steps.is_empty() {
                return Err(RecordError::EmptyChain { chain: chain_index });
            }
            if let Some(blank) = steps.iter().find(|s| s.text.trim().is_empty()) {
                return Err(RecordError::BlankStep {
                    chain: chain_index,
                    step: blank.step_index(),
                });
            }
            let answer_text = answer.into();
            if canonicalize_answer(&answer_text).is_empty() {
                return Err(RecordError::BlankAnswer { chain: chain_index });
            }
            built.push(ReasoningChain {
                chain_index,
                steps,
                answer_text,
            });
        }
        if built.is_empty() {
            return Err(RecordError::NoChains);
        }
        Ok(Self {
            question_id: question_id.into(),
            question_text: question_text.into(),
            chains: built,
            gold_answer,
        })
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn question_text(&self) -> &str {
        &self.question_text
    }

    pub fn chains(&self) -> &[ReasoningChain] {
        &self.chains
    }

    pub fn gold_answer(&self) -> Option<&str> {
        self.gold_answer.as_deref()
    }

    /// Number of sampled chains (N).
    pub fn n(&self) -> usize {
        self.chains.len()
    }

    pub fn total_steps(&self) -> usize {
        self.chains.iter().map(|c| c.steps.len()).sum()
    }

    pub fn step(&self, id: StepId) -> Option<&Step> {
        self.chains
            .get(id.chain.checked_sub(1)?)?
            .steps
            .get(id.step.checked_sub(1)?)
    }

    pub fn steps(&self) -> impl Iterator<Item = &Step> {
        self.chains.iter().flat_map(|c| c.steps.iter())
    }

    /// Whether `answer` matches the gold answer under canonical equality.
    /// `None` when the record carries no gold answer.
    pub fn is_correct(&self, answer: &str) -> Option<bool> {
        self.gold_answer
            .as_deref()
            .map(|gold| canonicalize_answer(gold) == canonicalize_answer(answer))
    }
}

/// A distinct canonical answer and the raw strings that map onto it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnswerKey {
    pub canonical: String,
    pub originals: BTreeSet<String>,
    /// Chains (1-based) whose answer maps to this key.
    pub chains: Vec<usize>,
}

impl AnswerKey {
    pub fn support(&self) -> usize {
        self.chains.len()
    }
}

/// Groups a record's final answers by canonical form, sorted by canonical key.
pub fn distinct_answers(record: &QuestionRecord) -> Vec<AnswerKey> {
    let mut grouped: BTreeMap<String, AnswerKey> = BTreeMap::new();
    for chain in record.chains() {
        let canonical = chain.answer_key();
        let entry = grouped.entry(canonical.clone()).or_insert_with(|| AnswerKey {
            canonical,
            originals: BTreeSet::new(),
            chains: Vec::new(),
        });
        entry.originals.insert(chain.answer_text.clone());
        entry.chains.push(chain.chain_index);
    }
    grouped.into_values().collect()
}

fn whitespace_run() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s+").unwrap())
}

fn decimal_literal() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([+-]?)([0-9]*)(?:\.([0-9]*))?$").unwrap())
}

fn collapse_whitespace(s: &str) -> String {
    whitespace_run().replace_all(s.trim(), " ").into_owned()
}

/// Returns the inside of `\boxed{...}` when the braces wrap the whole string.
pub(crate) fn strip_boxed(s: &str) -> Option<&str> {
    let body = s.strip_prefix("\\boxed{")?;
    let mut depth = 1usize;
    for (i, c) in body.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return (i + 1 == body.len()).then(|| &body[..i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn normalize_decimal(s: &str) -> Option<String> {
    let caps = decimal_literal().captures(s)?;
    let sign = caps.get(1).map_or("", |m| m.as_str());
    let int = caps.get(2).map_or("", |m| m.as_str());
    let frac = caps.get(3).map_or("", |m| m.as_str());
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    let int = match int.trim_start_matches('0') {
        "" => "0",
        rest => rest,
    };
    let frac = frac.trim_end_matches('0');
    let mut out = String::new();
    if sign == "-" && !(int == "0" && frac.is_empty()) {
        out.push('-');
    }
    out.push_str(int);
    if !frac.is_empty() {
        out.push('.');
        out.push_str(frac);
    }
    Some(out)
}

/// Normal form used for answer equality.
///
/// Trims and collapses whitespace, unwraps an enclosing `\boxed{...}`,
/// lowercases, and drops a trailing period, repeating until nothing changes.
/// Plain decimal literals are then rewritten without redundant zeros or sign
/// (`"007"` becomes `"7"`, `"-0.50"` becomes `"-0.5"`). Fractions and other
/// symbolic forms are left as text.
pub fn canonicalize_answer(raw: &str) -> String {
    let mut s = collapse_whitespace(raw);
    loop {
        let before = s.clone();
        if let Some(inner) = strip_boxed(&s) {
            s = collapse_whitespace(inner);
        }
        if let Some(stripped) = s.strip_suffix('.') {
            s = stripped.trim_end().to_string();
        }
        s = s.to_lowercase();
        if s == before {
            break;
        }
    }
    normalize_decimal(&s).unwrap_or(s)
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: malformed record: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: duplicate question_id `{question_id}`")]
    DuplicateId { line: usize, question_id: String },
    #[error("line {line}: question `{question_id}`: {source}")]
    Invalid {
        line: usize,
        question_id: String,
        #[source]
        source: RecordError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    question_id: String,
    question: String,
    #[serde(default)]
    gold_answer: Option<String>,
    chains: Vec<ChainLine>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainLine {
    steps: Vec<String>,
    answer: String,
}

impl From<&QuestionRecord> for RecordLine {
    fn from(record: &QuestionRecord) -> Self {
        RecordLine {
            question_id: record.question_id.clone(),
            question: record.question_text.clone(),
            gold_answer: record.gold_answer.clone(),
            chains: record
                .chains
                .iter()
                .map(|c| ChainLine {
                    steps: c.steps.iter().map(|s| s.text.clone()).collect(),
                    answer: c.answer_text.clone(),
                })
                .collect(),
        }
    }
}

/// Reads a JSONL dataset. Blank lines are skipped; line numbers in errors are
/// 1-based.
pub fn parse_dataset<R: BufRead>(source: R) -> Result<Vec<QuestionRecord>, DatasetError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RecordLine = serde_json::from_str(&line).map_err(|source| {
            DatasetError::Malformed {
                line: line_no,
                source,
            }
        })?;
        if !seen.insert(raw.question_id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                question_id: raw.question_id,
            });
        }
        let record = QuestionRecord::new(
            raw.question_id.clone(),
            raw.question,
            raw.gold_answer,
            raw.chains.into_iter().map(|c| (c.steps, c.answer)),
        )
        .map_err(|source| DatasetError::Invalid {
            line: line_no,
            question_id: raw.question_id,
            source,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Writes records in the same JSONL schema `parse_dataset` reads.
pub fn write_dataset<W: Write>(mut sink: W, records: &[QuestionRecord]) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut sink, &RecordLine::from(record))?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}
