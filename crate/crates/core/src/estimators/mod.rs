//! Per-answer confidence estimators.
//!
//! | estimator            | raw mass per answer                                        |
//! |----------------------|------------------------------------------------------------|
//! | `selfcons`           | chains ending in the answer                                |
//! | `cenconf`            | Katz centrality of the answer node                         |
//! | `pathconv_exact`     | simple paths `Q -> A` of at most `L` edges                 |
//! | `pathconv_sampled`   | attenuated random-walk mass reaching `A`                   |
//! | `pathweight`         | sum over simple paths of the product of merged weights     |
//! | `pathweight_sampled` | walk mass on the merged graph, weights folded into the walk |
//!
//! Every estimator normalizes raw mass over the question's distinct answers.
//! When all raw mass is zero the scores fall back to uniform and the report
//! says so.

mod centrality;
mod katz;
mod paths;
mod sampling;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{canonicalize_answer, distinct_answers, QuestionRecord};

pub use centrality::{
    centrality_variant, closeness, laplacian, pagerank, variant_confidence, CentralityVariant,
};
pub use katz::{cenconf, katz_centrality, katz_scores, spectral_radius, KatzSolution};
pub use paths::{enumerate_paths, path_masses, pathconv_exact, pathweight, PathCount, PathMass};
pub use sampling::{
    derive_seed, pathconv_sampled, pathweight_sampled, sample_path_mass,
    sample_weighted_path_mass, WALK_CHUNK,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[serde(rename = "selfcons")]
    SelfCons,
    #[serde(rename = "cenconf")]
    CenConf,
    PathconvExact,
    PathconvSampled,
    #[serde(rename = "pathweight")]
    PathWeight,
    #[serde(rename = "pathweight_sampled")]
    PathWeightSampled,
}

impl Estimator {
    /// The five estimators run by default.
    pub const CORE: [Estimator; 5] = [
        Estimator::SelfCons,
        Estimator::CenConf,
        Estimator::PathconvExact,
        Estimator::PathconvSampled,
        Estimator::PathWeight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::SelfCons => "selfcons",
            Estimator::CenConf => "cenconf",
            Estimator::PathconvExact => "pathconv_exact",
            Estimator::PathconvSampled => "pathconv_sampled",
            Estimator::PathWeight => "pathweight",
            Estimator::PathWeightSampled => "pathweight_sampled",
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Estimator::PathWeightSampled]
            .into_iter()
            .chain(Estimator::CORE)
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown estimator `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorParams {
    /// Katz attenuation.
    pub alpha: f64,
    /// Katz base centrality.
    pub beta: f64,
    /// Maximum path length `L`, in edges.
    pub max_path_len: usize,
    /// Walks per answer for the sampled estimators (`M`).
    pub sample_count: usize,
    /// Per-hop walk attenuation.
    pub gamma: f64,
    pub seed: u64,
    /// Exact path enumeration refuses graphs with more nodes than this.
    pub max_nodes: usize,
    /// Exact path enumeration gives up after this many DFS edge expansions.
    pub path_budget: u64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 1.0,
            max_path_len: 12,
            sample_count: 10_000,
            gamma: 0.9,
            seed: 0,
            max_nodes: 200,
            path_budget: 20_000_000,
        }
    }
}

impl EstimatorParams {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |name: &'static str, value: f64| EstimatorError::Parameter { name, value };
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(bad("alpha", self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(bad("gamma", self.gamma));
        }
        if self.max_path_len == 0 {
            return Err(bad("max_path_len", 0.0));
        }
        if self.sample_count == 0 {
            return Err(bad("sample_count", 0.0));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("parameter {name} = {value} is out of range")]
    Parameter { name: &'static str, value: f64 },
    #[error("alpha = {alpha} must be below 1/lambda_max = {bound} (lambda_max = {lambda_max})")]
    AlphaTooLarge {
        alpha: f64,
        lambda_max: f64,
        bound: f64,
    },
    #[error("Katz iteration did not converge after {iterations} iterations (change {change:e})")]
    NotConverged { iterations: usize, change: f64 },
    #[error("graph has {nodes} nodes, above the exact-enumeration bound of {bound}; use the sampled estimator")]
    TooLarge { nodes: usize, bound: usize },
    #[error("path enumeration exceeded its budget of {budget} expansions; use the sampled estimator")]
    BudgetExceeded { budget: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Unnormalized mass per answer (counts, Katz scores, or walk estimates).
    pub raw_mass: BTreeMap<String, f64>,
    /// Scores are uniform because every answer had zero raw mass.
    #[serde(default)]
    pub uniform_fallback: bool,
    /// `simple_paths` or `random_walks` for the path estimators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_semantics: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_counts: Option<BTreeMap<String, u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansions: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub question_id: String,
    pub estimator: Estimator,
    pub params: EstimatorParams,
    /// Canonical answer to confidence in `[0, 1]`.
    pub scores: BTreeMap<String, f64>,
    pub diagnostics: Diagnostics,
}

impl ConfidenceReport {
    /// Highest-scoring answer; ties go to the lexicographically smallest key.
    pub fn designated(&self) -> Option<(&str, f64)> {
        let mut best: Option<(&str, f64)> = None;
        for (answer, &score) in &self.scores {
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((answer, score));
            }
        }
        best
    }

    /// Confidence of an arbitrary (raw) answer; 0 when it is not among the
    /// sampled answers.
    pub fn confidence_for(&self, answer: &str) -> f64 {
        self.scores
            .get(&canonicalize_answer(answer))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Normalizes raw per-answer mass into scores, falling back to uniform when
/// the total is zero.
pub(crate) fn normalize(raw: &BTreeMap<String, f64>) -> (BTreeMap<String, f64>, bool) {
    let total: f64 = raw.values().sum();
    if total > 0.0 {
        (raw.iter().map(|(k, &v)| (k.clone(), v / total)).collect(), false)
    } else {
        let uniform = 1.0 / raw.len().max(1) as f64;
        (raw.keys().map(|k| (k.clone(), uniform)).collect(), true)
    }
}

pub(crate) fn report(
    question_id: &str,
    estimator: Estimator,
    params: &EstimatorParams,
    raw: BTreeMap<String, f64>,
    mut diagnostics: Diagnostics,
) -> ConfidenceReport {
    let (scores, uniform_fallback) = normalize(&raw);
    diagnostics.raw_mass = raw;
    diagnostics.uniform_fallback = uniform_fallback;
    ConfidenceReport {
        question_id: question_id.to_string(),
        estimator,
        params: *params,
        scores,
        diagnostics,
    }
}

/// Fraction of chains whose canonical answer is each distinct answer.
pub fn self_consistency(record: &QuestionRecord, params: &EstimatorParams) -> ConfidenceReport {
    let n = record.n() as f64;
    let counts: BTreeMap<String, f64> = distinct_answers(record)
        .into_iter()
        .map(|k| (k.canonical.clone(), k.support() as f64))
        .collect();
    let scores = counts.iter().map(|(k, &c)| (k.clone(), c / n)).collect();
    ConfidenceReport {
        question_id: record.question_id().to_string(),
        estimator: Estimator::SelfCons,
        params: *params,
        scores,
        diagnostics: Diagnostics {
            raw_mass: counts,
            ..Diagnostics::default()
        },
    }
}
