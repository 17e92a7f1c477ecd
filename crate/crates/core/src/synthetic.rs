//! Planted-answer datasets with a known structural signal.
//!
//! The gold answer is reached by `correct_chains` chains that open with the
//! same `shared_steps` step texts. Every other chain has steps nobody else
//! uses and an answer drawn uniformly from a pool of `W` wrong answers, with
//! `W` itself uniform in `1..=chains - correct_chains`. With `hard_fraction`
//! above zero, that share of questions has no gold chain at all. Answer
//! labels are random integers, so argmax ties carry no bias toward gold, and
//! chain order is shuffled.
//!
//! The default `hard_fraction` of 0.3 matters: if every question carried its
//! gold chains, a structure-aware estimator would always be right and AUROC
//! would be undefined.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::QuestionRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub questions: usize,
    /// Chains per question (`N`).
    pub chains: usize,
    /// Chains reaching the gold answer on easy questions (`C`).
    pub correct_chains: usize,
    /// Leading steps shared by those chains (`S`).
    pub shared_steps: usize,
    /// Share of questions whose gold answer is never sampled.
    pub hard_fraction: f64,
    pub min_steps: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            questions: 200,
            chains: 10,
            correct_chains: 3,
            shared_steps: 2,
            hard_fraction: 0.3,
            min_steps: 3,
            max_steps: 6,
            seed: 0,
        }
    }
}

fn unique_steps(q: usize, chain: usize, len: usize) -> Vec<String> {
    (1..=len)
        .map(|j| format!("q{q} chain {chain}: derive intermediate result {j}"))
        .collect()
}

/// `count` distinct labels in `100..1_000_000`.
fn labels(rng: &mut ChaCha8Rng, count: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(count);
    while out.len() < count {
        let label = rng.random_range(100..1_000_000u32).to_string();
        if !out.contains(&label) {
            out.push(label);
        }
    }
    out
}

pub fn generate(config: &SyntheticConfig) -> Vec<QuestionRecord> {
    assert!(config.correct_chains <= config.chains, "more correct chains than chains");
    assert!(config.min_steps >= 1 && config.min_steps <= config.max_steps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.questions)
        .map(|q| {
            let mut pool = labels(&mut rng, config.chains + 1);
            let gold = pool.remove(0);
            let hard = rng.random_bool(config.hard_fraction);
            let mut chains: Vec<(Vec<String>, String)> = Vec::with_capacity(config.chains);
            let mut next_chain = 0;
            let len = |rng: &mut ChaCha8Rng| rng.random_range(config.min_steps..=config.max_steps);

            let wrong_total = if hard {
                config.chains
            } else {
                for _ in 0..config.correct_chains {
                    let l = len(&mut rng).max(config.shared_steps + 1);
                    let mut steps: Vec<String> = (1..=config.shared_steps)
                        .map(|j| format!("q{q}: key observation {j}"))
                        .collect();
                    steps.extend(
                        unique_steps(q, next_chain, l - config.shared_steps)
                            .into_iter()
                            .map(|s| format!("{s} (branch)")),
                    );
                    chains.push((steps, gold.clone()));
                    next_chain += 1;
                }
                config.chains - config.correct_chains
            };
            if wrong_total > 0 {
                let w = rng.random_range(1..=wrong_total);
                for _ in 0..wrong_total {
                    let l = len(&mut rng);
                    let answer = pool[rng.random_range(0..w)].clone();
                    chains.push((unique_steps(q, next_chain, l), answer));
                    next_chain += 1;
                }
            }
            chains.shuffle(&mut rng);
            QuestionRecord::new(format!("syn-{q:04}"), format!("Synthetic question {q}"), Some(gold), chains)
                .expect("generated chains are well formed")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::distinct_answers;

    #[test]
    fn shapes_follow_the_config() {
        let config = SyntheticConfig { questions: 50, seed: 3, ..Default::default() };
        let data = generate(&config);
        assert_eq!(data.len(), 50);
        for q in &data {
            assert_eq!(q.n(), 10);
            let answers = distinct_answers(q);
            assert!((1..=8).contains(&answers.len()));
            let gold = answers.iter().find(|a| Some(a.canonical.as_str()) == q.gold_answer());
            if let Some(gold) = gold {
                assert_eq!(gold.support(), 3);
            }
            for chain in q.chains() {
                assert!((3..=6).contains(&chain.steps().len()));
            }
        }
        assert_eq!(generate(&config), data);
    }

    #[test]
    fn hard_questions_lack_gold_chains() {
        let data = generate(&SyntheticConfig { questions: 20, hard_fraction: 1.0, ..Default::default() });
        for q in &data {
            let gold = q.gold_answer().unwrap();
            assert!(q.chains().iter().all(|c| c.answer_text() != gold));
        }
    }

    #[test]
    fn correct_chains_share_their_opening_steps() {
        let data = generate(&SyntheticConfig { questions: 20, hard_fraction: 0.0, ..Default::default() });
        for q in &data {
            let gold = q.gold_answer().unwrap();
            let openings: Vec<Vec<&str>> = q
                .chains()
                .iter()
                .filter(|c| c.answer_text() == gold)
                .map(|c| c.steps()[..2].iter().map(|s| s.text()).collect())
                .collect();
            assert_eq!(openings.len(), 3);
            assert!(openings.windows(2).all(|w| w[0] == w[1]));
        }
    }
}
