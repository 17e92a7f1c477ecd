use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::{report, ConfidenceReport, Diagnostics, Estimator, EstimatorError, EstimatorParams};
use crate::graph::{AnswerGraph, Digraph, NodeId, ReasoningGraph};

/// Graphs up to this size are solved directly with a dense LU factorization.
const DENSE_LIMIT: usize = 500;
const TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct KatzSolution {
    /// Indexed like the graph's nodes.
    pub scores: Vec<f64>,
    pub lambda_max: f64,
    /// 0 for the direct solve.
    pub iterations: usize,
    /// `max |x - alpha A x - beta|` at the returned solution.
    pub residual: f64,
}

/// Largest eigenvalue modulus of the adjacency matrix.
///
/// Only strongly connected components contribute, so each one is handled as
/// its own dense block; a DAG has radius 0.
pub fn spectral_radius(topology: &Digraph) -> f64 {
    let mut pg = DiGraph::<(), ()>::with_capacity(topology.node_count(), topology.edge_count());
    let idx: Vec<_> = (0..topology.node_count()).map(|_| pg.add_node(())).collect();
    for (a, b) in topology.edges() {
        pg.add_edge(idx[a], idx[b], ());
    }
    let mut radius = 0.0_f64;
    for component in tarjan_scc(&pg) {
        let members: Vec<usize> = component.iter().map(|n| n.index()).collect();
        if members.len() == 1 {
            if topology.has_edge(members[0], members[0]) {
                radius = radius.max(1.0);
            }
            continue;
        }
        let k = members.len();
        let block = DMatrix::from_fn(k, k, |i, j| {
            f64::from(u8::from(topology.has_edge(members[i], members[j])))
        });
        let largest = block
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        radius = radius.max(largest);
    }
    radius
}

/// Solves `x_v = alpha * sum_{u -> v} x_u + beta` for every node.
pub fn katz_centrality(
    topology: &Digraph,
    alpha: f64,
    beta: f64,
) -> Result<KatzSolution, EstimatorError> {
    katz_with_limit(topology, alpha, beta, DENSE_LIMIT)
}

fn katz_with_limit(
    topology: &Digraph,
    alpha: f64,
    beta: f64,
    dense_limit: usize,
) -> Result<KatzSolution, EstimatorError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(EstimatorError::Parameter { name: "alpha", value: alpha });
    }
    if !beta.is_finite() {
        return Err(EstimatorError::Parameter { name: "beta", value: beta });
    }
    let lambda_max = spectral_radius(topology);
    if alpha * lambda_max >= 1.0 {
        return Err(EstimatorError::AlphaTooLarge {
            alpha,
            lambda_max,
            bound: 1.0 / lambda_max,
        });
    }

    let n = topology.node_count();
    let (scores, iterations) = if n <= dense_limit {
        let mut m = DMatrix::<f64>::identity(n, n);
        for (from, to) in topology.edges() {
            m[(to, from)] -= alpha;
        }
        let rhs = DVector::from_element(n, beta);
        // alpha * lambda_max < 1 keeps I - alpha A invertible.
        let x = m
            .lu()
            .solve(&rhs)
            .expect("I - alpha A is nonsingular below the spectral bound");
        (x.iter().copied().collect::<Vec<_>>(), 0)
    } else {
        iterate(topology, alpha, beta)?
    };
    let residual = residual(topology, alpha, beta, &scores);
    Ok(KatzSolution {
        scores,
        lambda_max,
        iterations,
        residual,
    })
}

fn step(topology: &Digraph, alpha: f64, beta: f64, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|v| beta + alpha * topology.predecessors(v).iter().map(|&u| x[u]).sum::<f64>())
        .collect()
}

fn iterate(topology: &Digraph, alpha: f64, beta: f64) -> Result<(Vec<f64>, usize), EstimatorError> {
    let mut x = vec![beta; topology.node_count()];
    let mut change = f64::INFINITY;
    for iteration in 1..=MAX_ITERATIONS {
        let next = step(topology, alpha, beta, &x);
        change = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if change < TOLERANCE {
            return Ok((x, iteration));
        }
    }
    Err(EstimatorError::NotConverged {
        iterations: MAX_ITERATIONS,
        change,
    })
}

fn residual(topology: &Digraph, alpha: f64, beta: f64, x: &[f64]) -> f64 {
    step(topology, alpha, beta, x)
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Katz centrality keyed by node id.
pub fn katz_scores(
    graph: &ReasoningGraph,
    alpha: f64,
    beta: f64,
) -> Result<BTreeMap<NodeId, f64>, EstimatorError> {
    let solution = katz_centrality(graph.topology(), alpha, beta)?;
    Ok(graph
        .nodes()
        .iter()
        .cloned()
        .zip(solution.scores)
        .collect())
}

/// Katz centrality of each answer node, normalized over the answers.
pub fn cenconf<G: AnswerGraph>(
    graph: &G,
    params: &EstimatorParams,
) -> Result<ConfidenceReport, EstimatorError> {
    let solution = katz_centrality(graph.topology(), params.alpha, params.beta)?;
    let raw = graph
        .answers()
        .iter()
        .map(|(key, v)| (key.clone(), solution.scores[*v]))
        .collect();
    Ok(report(
        graph.question_id(),
        Estimator::CenConf,
        params,
        raw,
        Diagnostics {
            lambda_max: Some(solution.lambda_max),
            iterations: Some(solution.iterations),
            residual: Some(solution.residual),
            ..Diagnostics::default()
        },
    ))
}
