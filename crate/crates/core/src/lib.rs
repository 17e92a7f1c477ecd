//! Confidence estimation for LLM reasoning from the structure of several
//! sampled chains of thought.
//!
//! Chains for one question are joined into a reasoning graph (question node,
//! step nodes, deduplicated answer nodes, links between equivalent steps) and
//! each candidate answer is scored by centrality, path convergence or
//! weighted path convergence. Calibration metrics and a confidence-gated
//! routing simulator sit on top.

pub mod calibration;
pub mod chain;
pub mod equivalence;
pub mod estimators;
pub mod gateway;
pub mod graph;
pub mod pipeline;
pub mod routing;
pub mod synthetic;

pub use calibration::{CalibrationRecord, MetricsReport};
pub use chain::{QuestionRecord, ReasoningChain, Step, StepId};
pub use equivalence::{EquivalencePair, StepMatcher};
pub use estimators::{ConfidenceReport, Estimator, EstimatorParams};
pub use graph::{AnswerGraph, MergedGraph, NodeId, ReasoningGraph};
pub use pipeline::MatchStrategy;
pub use routing::{OutcomeFixture, RoutingPolicy};
