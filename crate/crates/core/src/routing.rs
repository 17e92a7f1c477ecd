//! Confidence-gated interventions: pick the least confident `k%` of
//! questions and replay recorded outcomes to see what the intervention buys.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Columns reported by [`routing_table`].
pub const DEFAULT_K: [f64; 4] = [5.0, 10.0, 15.0, 100.0];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeFixture {
    pub question_id: String,
    pub base_correct: bool,
    pub intervened_correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intervention {
    /// Second pass by the same model with the reflection prompt.
    Reflect,
    /// Hand-off to a larger model.
    Cascade,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    pub k_percent: f64,
    pub intervention: Intervention,
}

#[derive(Debug, Error, PartialEq)]
pub enum RoutingError {
    #[error("k must lie in (0, 100], got {0}")]
    K(f64),
    #[error("no confidences to route")]
    Empty,
    #[error("no outcome fixture for question {0}")]
    MissingFixture(String),
    #[error("duplicate outcome fixture for question {0}")]
    DuplicateFixture(String),
    #[error("fixture line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("reading fixtures: {0}")]
    Io(String),
}

/// `ceil(k% * n)`, treating products within 1e-9 of an integer as that
/// integer so that e.g. 15% of 20 is 3, not 4.
pub fn selection_size(n: usize, k_percent: f64) -> Result<usize, RoutingError> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(RoutingError::K(k_percent));
    }
    let exact = k_percent * n as f64 / 100.0;
    let size = if (exact - exact.round()).abs() < 1e-9 {
        exact.round()
    } else {
        exact.ceil()
    };
    Ok((size as usize).min(n))
}

/// The `ceil(k% * n)` least confident questions; ties go to the smaller
/// question id.
pub fn select_bottom_k(
    confidences: &BTreeMap<String, f64>,
    k_percent: f64,
) -> Result<BTreeSet<String>, RoutingError> {
    if confidences.is_empty() {
        return Err(RoutingError::Empty);
    }
    let size = selection_size(confidences.len(), k_percent)?;
    let mut ranked: Vec<(&String, f64)> = confidences.iter().map(|(q, &c)| (q, c)).collect();
    // the map iterates in id order and the sort is stable
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(ranked.into_iter().take(size).map(|(q, _)| q.clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub policy: RoutingPolicy,
    pub n: usize,
    pub selected: usize,
    pub base_accuracy: f64,
    pub after_accuracy: f64,
    pub delta: f64,
    /// Selected questions the intervention turned from wrong to right.
    pub fixed: usize,
    /// Selected questions the intervention turned from right to wrong.
    pub broken: usize,
}

fn index_fixtures(
    fixtures: &[OutcomeFixture],
) -> Result<BTreeMap<&str, &OutcomeFixture>, RoutingError> {
    let mut map = BTreeMap::new();
    for f in fixtures {
        if map.insert(f.question_id.as_str(), f).is_some() {
            return Err(RoutingError::DuplicateFixture(f.question_id.clone()));
        }
    }
    Ok(map)
}

/// Accuracy over the questions in `confidences` when the selected ones take
/// their intervened outcome.
pub fn simulate(
    policy: &RoutingPolicy,
    fixtures: &[OutcomeFixture],
    confidences: &BTreeMap<String, f64>,
) -> Result<SimulationReport, RoutingError> {
    let selected = select_bottom_k(confidences, policy.k_percent)?;
    let by_id = index_fixtures(fixtures)?;
    let (mut base, mut after, mut fixed, mut broken) = (0usize, 0usize, 0usize, 0usize);
    for qid in confidences.keys() {
        let f = by_id
            .get(qid.as_str())
            .ok_or_else(|| RoutingError::MissingFixture(qid.clone()))?;
        base += usize::from(f.base_correct);
        if selected.contains(qid) {
            after += usize::from(f.intervened_correct);
            fixed += usize::from(!f.base_correct && f.intervened_correct);
            broken += usize::from(f.base_correct && !f.intervened_correct);
        } else {
            after += usize::from(f.base_correct);
        }
    }
    let n = confidences.len();
    let base_accuracy = base as f64 / n as f64;
    let after_accuracy = after as f64 / n as f64;
    Ok(SimulationReport {
        policy: *policy,
        n,
        selected: selected.len(),
        base_accuracy,
        after_accuracy,
        delta: after_accuracy - base_accuracy,
        fixed,
        broken,
    })
}

/// Base accuracy and one simulated column per `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingTable {
    pub intervention: Intervention,
    pub n: usize,
    pub base: f64,
    pub columns: Vec<SimulationReport>,
}

impl RoutingTable {
    pub fn render(&self) -> String {
        let mut header = format!("{:<10} {:>7}", "", "base");
        let mut row = format!("{:<10} {:>7.1}", "accuracy", 100.0 * self.base);
        for c in &self.columns {
            header.push_str(&format!(" {:>7}", format!("+{}%", c.policy.k_percent)));
            row.push_str(&format!(" {:>7.1}", 100.0 * c.after_accuracy));
        }
        format!("{header}\n{row}\n")
    }
}

pub fn routing_table(
    intervention: Intervention,
    ks: &[f64],
    fixtures: &[OutcomeFixture],
    confidences: &BTreeMap<String, f64>,
) -> Result<RoutingTable, RoutingError> {
    let columns = ks
        .iter()
        .map(|&k_percent| {
            simulate(&RoutingPolicy { k_percent, intervention }, fixtures, confidences)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let base = match columns.first() {
        Some(c) => c.base_accuracy,
        None => simulate(&RoutingPolicy { k_percent: 100.0, intervention }, fixtures, confidences)?
            .base_accuracy,
    };
    Ok(RoutingTable {
        intervention,
        n: confidences.len(),
        base,
        columns,
    })
}

/// Reads JSONL fixtures, skipping blank lines.
pub fn read_fixtures<R: BufRead>(reader: R) -> Result<Vec<OutcomeFixture>, RoutingError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RoutingError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fixture = serde_json::from_str(&line).map_err(|e| RoutingError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(fixture);
    }
    Ok(out)
}
