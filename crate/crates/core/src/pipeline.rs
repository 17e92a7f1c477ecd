//! Question-level plumbing: equivalence, graph construction and estimator
//! dispatch, plus dataset-wide scoring and evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calibration::{calibration_records, CalibrationError, MetricsReport};
use crate::chain::QuestionRecord;
use crate::equivalence::{
    build_equivalence_set, EquivalenceError, ExactMatcher, NormalizedMatcher, StepMatcher,
};
use crate::estimators::{
    cenconf, derive_seed, pathconv_exact, pathconv_sampled, pathweight, pathweight_sampled,
    self_consistency, ConfidenceReport, Estimator, EstimatorError, EstimatorParams,
};
use crate::graph::{
    build_graph, finalize_acyclic, merge_equivalent, GraphError, MergedGraph, ReasoningGraph,
    RemovalReport,
};

/// How step equivalence is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    Exact,
    #[default]
    Normalized,
    /// LLM judge through the gateway.
    Judge,
}

impl MatchStrategy {
    /// Matcher for the strategies that need no gateway.
    pub fn offline_matcher(self) -> Option<Box<dyn StepMatcher>> {
        match self {
            MatchStrategy::Exact => Some(Box::new(ExactMatcher)),
            MatchStrategy::Normalized => Some(Box::new(NormalizedMatcher)),
            MatchStrategy::Judge => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("question {question_id}: {source}")]
    Equivalence {
        question_id: String,
        #[source]
        source: EquivalenceError,
    },
    #[error("question {question_id}: {source}")]
    Graph {
        question_id: String,
        #[source]
        source: GraphError,
    },
}

/// The finalized reasoning graph of one question and its merged quotient.
#[derive(Debug, Clone)]
pub struct PreparedQuestion {
    pub graph: ReasoningGraph,
    pub merged: MergedGraph,
    pub removal: RemovalReport,
}

pub fn prepare(
    record: &QuestionRecord,
    matcher: &dyn StepMatcher,
) -> Result<PreparedQuestion, PipelineError> {
    let qid = || record.question_id().to_string();
    let pairs = build_equivalence_set(record, matcher)
        .map_err(|source| PipelineError::Equivalence { question_id: qid(), source })?;
    let graph_err = |source| PipelineError::Graph { question_id: qid(), source };
    let raw = build_graph(record, &pairs).map_err(graph_err)?;
    let (graph, removal) = finalize_acyclic(&raw).map_err(graph_err)?;
    let merged = merge_equivalent(&graph).map_err(graph_err)?;
    Ok(PreparedQuestion {
        graph,
        merged,
        removal,
    })
}

/// Seed for one question's walks: the run seed mixed with a digest of the
/// question id, so results do not depend on dataset order.
pub fn question_seed(run_seed: u64, question_id: &str) -> u64 {
    let digest = Sha256::digest(question_id.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    derive_seed(run_seed, u64::from_le_bytes(head))
}

/// Runs one estimator. Katz and path convergence read the finalized
/// reasoning graph, path weighting the merged graph.
pub fn run_estimator(
    estimator: Estimator,
    record: &QuestionRecord,
    prepared: &PreparedQuestion,
    params: &EstimatorParams,
) -> Result<ConfidenceReport, EstimatorError> {
    params.validate()?;
    let walk_params = EstimatorParams {
        seed: question_seed(params.seed, record.question_id()),
        ..*params
    };
    let mut report = match estimator {
        Estimator::SelfCons => Ok(self_consistency(record, params)),
        Estimator::CenConf => cenconf(&prepared.graph, params),
        Estimator::PathconvExact => pathconv_exact(&prepared.graph, params),
        Estimator::PathconvSampled => pathconv_sampled(&prepared.graph, &walk_params),
        Estimator::PathWeight => pathweight(&prepared.merged, params),
        Estimator::PathWeightSampled => pathweight_sampled(&prepared.merged, &walk_params),
    }?;
    // echo the run-level parameters, not the per-question walk seed
    report.params = *params;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorFailure {
    pub question_id: String,
    pub estimator: Estimator,
    pub message: String,
}

/// All reports for one question; estimator errors are kept, not fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScores {
    pub question_id: String,
    pub reports: Vec<ConfidenceReport>,
    pub failures: Vec<EstimatorFailure>,
    /// Inter pairs dropped to keep loops out of the graph.
    pub removed_pairs: usize,
}

impl QuestionScores {
    pub fn report(&self, estimator: Estimator) -> Option<&ConfidenceReport> {
        self.reports.iter().find(|r| r.estimator == estimator)
    }
}

pub fn score_question(
    record: &QuestionRecord,
    matcher: &dyn StepMatcher,
    estimators: &[Estimator],
    params: &EstimatorParams,
) -> Result<QuestionScores, PipelineError> {
    let prepared = prepare(record, matcher)?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &estimator in estimators {
        match run_estimator(estimator, record, &prepared, params) {
            Ok(r) => reports.push(r),
            Err(e) => {
                log::warn!("question {}: {estimator} failed: {e}", record.question_id());
                failures.push(EstimatorFailure {
                    question_id: record.question_id().to_string(),
                    estimator,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(QuestionScores {
        question_id: record.question_id().to_string(),
        reports,
        failures,
        removed_pairs: prepared.removal.removed.len(),
    })
}

/// Scores every question in parallel; output keeps dataset order.
pub fn score_dataset(
    dataset: &[QuestionRecord],
    matcher: &dyn StepMatcher,
    estimators: &[Estimator],
    params: &EstimatorParams,
) -> Result<Vec<QuestionScores>, PipelineError> {
    dataset
        .par_iter()
        .map(|record| score_question(record, matcher, estimators, params))
        .collect()
}

/// One metrics report per estimator, from each question's argmax answer.
pub fn evaluate_dataset(
    dataset: &[QuestionRecord],
    scores: &[QuestionScores],
    estimators: &[Estimator],
    bins: usize,
) -> Result<Vec<MetricsReport>, CalibrationError> {
    estimators
        .iter()
        .map(|&estimator| {
            let reports: Vec<ConfidenceReport> = scores
                .iter()
                .filter_map(|s| s.report(estimator).cloned())
                .collect();
            let (records, skipped) = calibration_records(dataset, &reports);
            MetricsReport::from_records(estimator, &records, skipped, bins)
        })
        .collect()
}
