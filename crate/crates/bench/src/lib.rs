//! Shared inputs for the benchmarks.

use reasongraph::equivalence::ExactMatcher;
use reasongraph::pipeline::{prepare, PreparedQuestion};
use reasongraph::synthetic::{generate, SyntheticConfig};
use reasongraph::QuestionRecord;

/// One planted-answer question with `chains` chains, prepared with exact
/// step matching.
pub fn prepared_question(chains: usize, seed: u64) -> (QuestionRecord, PreparedQuestion) {
    let config = SyntheticConfig {
        questions: 1,
        chains,
        correct_chains: (chains / 3).max(1),
        shared_steps: 2,
        hard_fraction: 0.0,
        seed,
        ..SyntheticConfig::default()
    };
    let record = generate(&config).remove(0);
    let prepared = prepare(&record, &ExactMatcher).expect("synthetic records are well formed");
    (record, prepared)
}
