use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{katz_centrality, normalize, EstimatorError, EstimatorParams};
use crate::graph::{AnswerGraph, Digraph, NodeId, ReasoningGraph};

/// Alternative centralities, kept for comparison against Katz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentralityVariant {
    Katz,
    Closeness,
    Pagerank,
    Laplacian,
}

impl CentralityVariant {
    pub const ALL: [CentralityVariant; 4] = [
        CentralityVariant::Katz,
        CentralityVariant::Closeness,
        CentralityVariant::Pagerank,
        CentralityVariant::Laplacian,
    ];
}

const PAGERANK_DAMPING: f64 = 0.85;

/// Closeness over incoming shortest paths, scaled by the reachable fraction
/// (Wasserman-Faust), so nodes nobody reaches score 0.
pub fn closeness(topology: &Digraph) -> Vec<f64> {
    let n = topology.node_count();
    (0..n)
        .map(|u| {
            let mut dist = vec![usize::MAX; n];
            dist[u] = 0;
            let mut queue = VecDeque::from([u]);
            let (mut total, mut reach) = (0usize, 1usize);
            while let Some(v) = queue.pop_front() {
                for &w in topology.predecessors(v) {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        total += dist[w];
                        reach += 1;
                        queue.push_back(w);
                    }
                }
            }
            if total == 0 || n <= 1 {
                return 0.0;
            }
            let r = (reach - 1) as f64;
            (r / total as f64) * (r / (n - 1) as f64)
        })
        .collect()
}

/// PageRank with damping 0.85; dangling nodes spread their mass uniformly.
pub fn pagerank(topology: &Digraph) -> Vec<f64> {
    let n = topology.node_count();
    if n == 0 {
        return Vec::new();
    }
    let uniform = 1.0 / n as f64;
    let mut x = vec![uniform; n];
    for _ in 0..10_000 {
        let dangling: f64 = (0..n)
            .filter(|&v| topology.successors(v).is_empty())
            .map(|v| x[v])
            .sum();
        let base = (1.0 - PAGERANK_DAMPING) * uniform + PAGERANK_DAMPING * dangling * uniform;
        let mut next = vec![base; n];
        for (v, &mass) in x.iter().enumerate() {
            let succ = topology.successors(v);
            for &w in succ {
                next[w] += PAGERANK_DAMPING * mass / succ.len() as f64;
            }
        }
        let change: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if change < 1e-15 * n as f64 {
            break;
        }
    }
    x
}

/// Normalized drop in Laplacian energy when each node is removed, on the
/// underlying undirected graph.
pub fn laplacian(topology: &Digraph) -> Vec<f64> {
    let n = topology.node_count();
    let mut neighbours = vec![Vec::new(); n];
    for (a, b) in topology.edges() {
        if a != b {
            neighbours[a].push(b);
            neighbours[b].push(a);
        }
    }
    for list in &mut neighbours {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = neighbours.iter().map(Vec::len).collect();
    // energy = sum of squared Laplacian eigenvalues = sum d^2 + 2|E|
    let edges: usize = degree.iter().sum::<usize>() / 2;
    let energy = (degree.iter().map(|d| d * d).sum::<usize>() + 2 * edges) as f64;
    if energy == 0.0 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|v| {
            let d = degree[v];
            // neighbours lose one degree each; v and its edges vanish
            let sq_change: usize = neighbours[v].iter().map(|&u| 2 * degree[u] - 1).sum();
            let drop = d * d + sq_change + 2 * d;
            drop as f64 / energy
        })
        .collect()
}

fn raw_scores(
    topology: &Digraph,
    variant: CentralityVariant,
    params: &EstimatorParams,
) -> Result<Vec<f64>, EstimatorError> {
    Ok(match variant {
        CentralityVariant::Katz => katz_centrality(topology, params.alpha, params.beta)?.scores,
        CentralityVariant::Closeness => closeness(topology),
        CentralityVariant::Pagerank => pagerank(topology),
        CentralityVariant::Laplacian => laplacian(topology),
    })
}

/// Scores of every node under the chosen centrality.
pub fn centrality_variant(
    graph: &ReasoningGraph,
    variant: CentralityVariant,
    params: &EstimatorParams,
) -> Result<BTreeMap<NodeId, f64>, EstimatorError> {
    let scores = raw_scores(graph.topology(), variant, params)?;
    Ok(graph.nodes().iter().cloned().zip(scores).collect())
}

/// Answer-node scores under `variant`, normalized like CenConf. The flag is
/// set when every answer scored 0 and the result is uniform.
pub fn variant_confidence<G: AnswerGraph>(
    graph: &G,
    variant: CentralityVariant,
    params: &EstimatorParams,
) -> Result<(BTreeMap<String, f64>, bool), EstimatorError> {
    let scores = raw_scores(graph.topology(), variant, params)?;
    let raw = graph
        .answers()
        .iter()
        .map(|(key, v)| (key.clone(), scores[*v]))
        .collect();
    Ok(normalize(&raw))
}
