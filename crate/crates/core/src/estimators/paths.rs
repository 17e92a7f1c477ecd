use std::collections::BTreeMap;

use super::{report, ConfidenceReport, Diagnostics, Estimator, EstimatorError, EstimatorParams};
use crate::graph::{AnswerGraph, Digraph};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathCount {
    pub count: u64,
    /// Node sequences in DFS order, when requested.
    pub paths: Option<Vec<Vec<usize>>>,
    /// DFS edge expansions spent.
    pub expansions: u64,
}

/// Simple-path totals for every answer of a graph, aligned with
/// [`AnswerGraph::answers`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathMass {
    pub counts: Vec<u64>,
    /// Sum over paths of the product of node weights along the path.
    pub weighted: Vec<u128>,
    pub expansions: u64,
}

/// Depth-first enumeration of simple paths out of `source` with at most
/// `max_len` edges. `reach(path, product)` fires once per path, with
/// `product` the weight product of every node on it.
fn simple_paths(
    topology: &Digraph,
    source: usize,
    max_len: usize,
    budget: u64,
    weight: impl Fn(usize) -> u128,
    mut reach: impl FnMut(&[usize], u128),
) -> Result<u64, EstimatorError> {
    let mut on_path = vec![false; topology.node_count()];
    let mut path = vec![source];
    // (node, next successor slot, weight product through node)
    let mut stack = vec![(source, 0usize, weight(source))];
    on_path[source] = true;
    let mut expansions = 0u64;
    loop {
        let depth = stack.len();
        let Some(frame) = stack.last_mut() else {
            break;
        };
        let (v, slot, product) = *frame;
        let succ = topology.successors(v);
        if slot == succ.len() || depth > max_len {
            on_path[v] = false;
            stack.pop();
            path.pop();
            continue;
        }
        frame.1 += 1;
        expansions += 1;
        if expansions > budget {
            return Err(EstimatorError::BudgetExceeded { budget });
        }
        let w = succ[slot];
        if on_path[w] {
            continue;
        }
        let through = product * weight(w);
        path.push(w);
        reach(&path, through);
        on_path[w] = true;
        stack.push((w, 0, through));
    }
    Ok(expansions)
}

/// Number of simple paths `source -> target` with at most `max_len` edges,
/// optionally listing them.
pub fn enumerate_paths(
    topology: &Digraph,
    source: usize,
    target: usize,
    max_len: usize,
    budget: u64,
    collect: bool,
) -> Result<PathCount, EstimatorError> {
    let mut count = 0;
    let mut paths = collect.then(Vec::new);
    let expansions = simple_paths(topology, source, max_len, budget, |_| 1, |path, _| {
        if path.last() == Some(&target) {
            count += 1;
            if let Some(list) = paths.as_mut() {
                list.push(path.to_vec());
            }
        }
    })?;
    Ok(PathCount {
        count,
        paths,
        expansions,
    })
}

/// Path counts and weighted path mass from the question to every answer in
/// one traversal.
pub fn path_masses<G: AnswerGraph>(
    graph: &G,
    params: &EstimatorParams,
) -> Result<PathMass, EstimatorError> {
    let n = graph.topology().node_count();
    if n > params.max_nodes {
        return Err(EstimatorError::TooLarge {
            nodes: n,
            bound: params.max_nodes,
        });
    }
    let mut slot = vec![usize::MAX; n];
    for (i, (_, v)) in graph.answers().iter().enumerate() {
        slot[*v] = i;
    }
    let k = graph.answers().len();
    let mut counts = vec![0u64; k];
    let mut weighted = vec![0u128; k];
    let expansions = simple_paths(
        graph.topology(),
        graph.question(),
        params.max_path_len,
        params.path_budget,
        |v| u128::from(graph.weight(v)),
        |path, product| {
            let v = *path.last().expect("paths are nonempty");
            if let Some(i) = slot.get(v).copied().filter(|&i| i != usize::MAX) {
                counts[i] += 1;
                weighted[i] += product;
            }
        },
    )?;
    Ok(PathMass {
        counts,
        weighted,
        expansions,
    })
}

fn path_report<G: AnswerGraph>(
    graph: &G,
    params: &EstimatorParams,
    estimator: Estimator,
    mass: PathMass,
    use_weights: bool,
) -> ConfidenceReport {
    let answers = graph.answers();
    let raw: BTreeMap<String, f64> = answers
        .iter()
        .enumerate()
        .map(|(i, (key, _))| {
            let m = if use_weights { mass.weighted[i] as f64 } else { mass.counts[i] as f64 };
            (key.clone(), m)
        })
        .collect();
    let counts = answers
        .iter()
        .zip(&mass.counts)
        .map(|((key, _), &c)| (key.clone(), c))
        .collect();
    report(
        graph.question_id(),
        estimator,
        params,
        raw,
        Diagnostics {
            path_semantics: Some("simple_paths".into()),
            path_counts: Some(counts),
            expansions: Some(mass.expansions),
            ..Diagnostics::default()
        },
    )
}

/// Share of simple `Q -> A` paths (at most `L` edges) ending at each answer.
/// Node weights are ignored.
pub fn pathconv_exact<G: AnswerGraph>(
    graph: &G,
    params: &EstimatorParams,
) -> Result<ConfidenceReport, EstimatorError> {
    let mass = path_masses(graph, params)?;
    Ok(path_report(graph, params, Estimator::PathconvExact, mass, false))
}

/// Share of weighted path mass, each path scoring the product of its node
/// weights. Meant for the merged graph.
pub fn pathweight<G: AnswerGraph>(
    graph: &G,
    params: &EstimatorParams,
) -> Result<ConfidenceReport, EstimatorError> {
    let mass = path_masses(graph, params)?;
    Ok(path_report(graph, params, Estimator::PathWeight, mass, true))
}
