use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{report, ConfidenceReport, Diagnostics, Estimator, EstimatorError, EstimatorParams};
use crate::graph::{AnswerGraph, Digraph};

/// Walks per independently seeded chunk. Results depend on the seed and the
/// walk count only, never on the thread count.
pub const WALK_CHUNK: usize = 1 << 12;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// One attenuated walk: returns its weight on hitting `target` within
/// `max_len` iterations, else 0. `hop(v)` is the factor applied on moving
/// into `v`.
fn walk(
    topology: &Digraph,
    source: usize,
    target: usize,
    max_len: usize,
    hop: &impl Fn(usize) -> f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut v = source;
    let mut w = 1.0;
    for _ in 0..max_len {
        if v == target {
            return w;
        }
        let succ = topology.successors(v);
        if succ.is_empty() {
            return 0.0;
        }
        v = succ[rng.random_range(0..succ.len())];
        w *= hop(v);
    }
    0.0
}

fn walk_mass(
    topology: &Digraph,
    source: usize,
    target: usize,
    walks: usize,
    max_len: usize,
    seed: u64,
    hop: impl Fn(usize) -> f64 + Sync,
) -> f64 {
    let chunks = walks.div_ceil(WALK_CHUNK);
    let sums: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, c as u64));
            let len = WALK_CHUNK.min(walks - c * WALK_CHUNK);
            (0..len)
                .map(|_| walk(topology, source, target, max_len, &hop, &mut rng))
                .sum::<f64>()
        })
        .collect();
    sums.iter().sum::<f64>() / walks as f64
}

/// Mean attenuated mass of `walks` uniform random walks from `source` that
/// reach `target`.
pub fn sample_path_mass(
    topology: &Digraph,
    source: usize,
    target: usize,
    walks: usize,
    max_len: usize,
    gamma: f64,
    seed: u64,
) -> f64 {
    walk_mass(topology, source, target, walks, max_len, seed, |_| gamma)
}

/// As [`sample_path_mass`], also multiplying in the weight of every node
/// the walk enters.
pub fn sample_weighted_path_mass<G: AnswerGraph + Sync>(
    graph: &G,
    target: usize,
    walks: usize,
    max_len: usize,
    gamma: f64,
    seed: u64,
) -> f64 {
    walk_mass(
        graph.topology(),
        graph.question(),
        target,
        walks,
        max_len,
        seed,
        |v| gamma * graph.weight(v) as f64,
    )
}

fn sampled<G: AnswerGraph + Sync>(
    graph: &G,
    params: &EstimatorParams,
    estimator: Estimator,
    weighted: bool,
) -> Result<ConfidenceReport, EstimatorError> {
    params.validate()?;
    let raw = graph
        .answers()
        .iter()
        .enumerate()
        .map(|(i, (key, v))| {
            let seed = derive_seed(params.seed, i as u64);
            let (m, l, g) = (params.sample_count, params.max_path_len, params.gamma);
            let mass = if weighted {
                sample_weighted_path_mass(graph, *v, m, l, g, seed)
            } else {
                sample_path_mass(graph.topology(), graph.question(), *v, m, l, g, seed)
            };
            (key.clone(), mass)
        })
        .collect();
    Ok(report(
        graph.question_id(),
        estimator,
        params,
        raw,
        Diagnostics {
            path_semantics: Some("random_walks".into()),
            ..Diagnostics::default()
        },
    ))
}

/// Random-walk estimate of path convergence; walks may revisit nodes.
pub fn pathconv_sampled<G: AnswerGraph + Sync>(
    graph: &G,
    params: &EstimatorParams,
) -> Result<ConfidenceReport, EstimatorError> {
    sampled(graph, params, Estimator::PathconvSampled, false)
}

/// Random-walk analogue of `pathweight` for merged graphs too large to
/// enumerate.
pub fn pathweight_sampled<G: AnswerGraph + Sync>(
    graph: &G,
    params: &EstimatorParams,
) -> Result<ConfidenceReport, EstimatorError> {
    sampled(graph, params, Estimator::PathWeightSampled, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::{g1_record, pair};
    use crate::graph::{build_graph, merge_equivalent};

    /// Exact expectation of one walk, by propagating probability mass.
    fn walk_expectation(
        g: &Digraph,
        source: usize,
        target: usize,
        max_len: usize,
        hop: impl Fn(usize) -> f64,
    ) -> f64 {
        let mut q = vec![0.0; g.node_count()];
        q[source] = 1.0;
        let mut hit = 0.0;
        for _ in 0..max_len {
            hit += q[target];
            q[target] = 0.0;
            let mut next = vec![0.0; q.len()];
            for (v, &mass) in q.iter().enumerate() {
                let succ = g.successors(v);
                for &u in succ {
                    next[u] += mass / succ.len() as f64 * hop(u);
                }
            }
            q = next;
        }
        hit
    }

    #[test]
    fn estimate_matches_exact_expectation() {
        let g = build_graph(&g1_record(), &[pair((1, 2), (2, 2))]).unwrap();
        let t = g.topology();
        let a1 = g.answer_node("a1").unwrap();
        let walks = 200_000;
        let est = sample_path_mass(t, 0, a1, walks, 12, 0.9, 7);
        let exact = walk_expectation(t, 0, a1, 12, |_| 0.9);
        // hit weights lie in [0, 1], so the standard error is at most 1/(2 sqrt M)
        let se = 0.5 / (walks as f64).sqrt();
        assert!((est - exact).abs() < 5.0 * se, "{est} vs {exact}");
        assert!(exact > 0.0);
    }

    #[test]
    fn weighted_estimate_matches_exact_expectation() {
        let g = build_graph(&g1_record(), &[pair((1, 2), (2, 2))]).unwrap();
        let m = merge_equivalent(&g).unwrap();
        let a1 = m.answer_node("a1").unwrap();
        let est = sample_weighted_path_mass(&m, a1, 100_000, 12, 0.9, 3);
        let exact = walk_expectation(m.topology(), 0, a1, 12, |v| 0.9 * m.weight(v) as f64);
        assert!((est - exact).abs() < 0.02 * exact, "{est} vs {exact}");
    }

    #[test]
    fn seeded_runs_are_reproducible_across_pools() {
        let g = build_graph(&g1_record(), &[pair((1, 2), (2, 2))]).unwrap();
        let p = EstimatorParams { sample_count: 3 * WALK_CHUNK + 17, seed: 11, ..Default::default() };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| pathconv_sampled(&g, &p).unwrap());
        let b = four.install(|| pathconv_sampled(&g, &p).unwrap());
        assert_eq!(a, b);
        let other = EstimatorParams { seed: 12, ..p };
        assert_ne!(a.diagnostics.raw_mass, pathconv_sampled(&g, &other).unwrap().diagnostics.raw_mass);
    }

    #[test]
    fn single_hop_scores_gamma() {
        let g = Digraph::from_edges(2, [(0, 1)]);
        assert!((sample_path_mass(&g, 0, 1, 50, 12, 0.9, 5) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn half_the_walks_dead_end() {
        let g = Digraph::from_edges(3, [(0, 1), (0, 2)]);
        let m = 100_000;
        let est = sample_path_mass(&g, 0, 1, m, 12, 0.9, 9);
        // weight gamma with probability 1/2
        let sigma = 0.9 * (0.25f64 / m as f64).sqrt();
        assert!((est - 0.45).abs() < 3.0 * sigma, "{est}");
    }

    #[test]
    fn g1_confidence_near_walk_oracle() {
        let g = build_graph(&g1_record(), &[pair((1, 2), (2, 2))]).unwrap();
        let p = EstimatorParams { sample_count: 100_000, ..Default::default() };
        let r = pathconv_sampled(&g, &p).unwrap();
        let exact: Vec<f64> = g
            .answers()
            .iter()
            .map(|(_, v)| walk_expectation(g.topology(), 0, *v, 12, |_| 0.9))
            .collect();
        let conf_a1 = exact[0] / (exact[0] + exact[1]);
        assert!((r.scores["a1"] - conf_a1).abs() < 0.03);
        assert_eq!(r.diagnostics.path_semantics.as_deref(), Some("random_walks"));
    }

    #[test]
    fn ranking_converges_to_oracle_ranking() {
        // Q branches to a 1-hop answer (prob 1/3) and a 2-hop one (prob 2/3)
        let g = Digraph::from_edges(5, [(0, 1), (0, 2), (0, 3), (2, 4), (3, 4)]);
        let near = walk_expectation(&g, 0, 1, 12, |_| 0.9);
        let far = walk_expectation(&g, 0, 4, 12, |_| 0.9);
        assert!(far > near);
        for m in [1_000, 10_000, 100_000] {
            let n = sample_path_mass(&g, 0, 1, m, 12, 0.9, derive_seed(1, 0));
            let f = sample_path_mass(&g, 0, 4, m, 12, 0.9, derive_seed(1, 1));
            assert!(f > n, "M = {m}");
        }
    }

    #[test]
    fn too_short_walks_fall_back_to_uniform() {
        let g = build_graph(&g1_record(), &[pair((1, 2), (2, 2))]).unwrap();
        let p = EstimatorParams { max_path_len: 1, sample_count: 100, ..Default::default() };
        let r = pathconv_sampled(&g, &p).unwrap();
        assert!(r.diagnostics.uniform_fallback);
        assert_eq!(r.scores["a2"], 0.5);
    }

    #[test]
    fn unreachable_target_gets_nothing() {
        let g = Digraph::from_edges(3, [(0, 1)]);
        assert_eq!(sample_path_mass(&g, 0, 2, 1000, 12, 0.9, 0), 0.0);
        // target within reach only after max_len hops
        let line = Digraph::from_edges(4, [(0, 1), (1, 2), (2, 3)]);
        assert_eq!(sample_path_mass(&line, 0, 3, 100, 3, 0.9, 0), 0.0);
        let hit = sample_path_mass(&line, 0, 3, 100, 4, 0.5, 0);
        assert!((hit - 0.125).abs() < 1e-15);
    }
}
