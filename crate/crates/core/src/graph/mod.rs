//! Reasoning graph construction.
//!
//! [`build_graph`] lays the chains out from a single question node, links
//! equivalent steps with bidirectional inter edges, and funnels each chain
//! into a shared node per distinct canonical answer. [`finalize_acyclic`]
//! then discards the inter edges that close a loop through intra edges, and
//! [`merge_equivalent`] collapses equivalent steps into weighted nodes.
//!
//! Node order is fixed: the question, steps by `(chain, step)`, then answers
//! by canonical key. Matrices and traversals inherit that order.

mod digraph;
mod merge;

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::chain::{distinct_answers, QuestionRecord, StepId};
use crate::equivalence::EquivalencePair;
pub use digraph::{Digraph, UnionFind};
pub use merge::{merge_equivalent, MergedGraph, MergedNode};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Question,
    Step(StepId),
    Answer(String),
}

impl NodeId {
    pub fn kind(&self) -> NodeKind {
        match self {
            NodeId::Question => NodeKind::Question,
            NodeId::Step(_) => NodeKind::Step,
            NodeId::Answer(_) => NodeKind::Answer,
        }
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeId::Question => f.write_str("Q"),
            NodeId::Step(id) => write!(f, "{id}"),
            NodeId::Answer(key) => write!(f, "A:{key}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Question,
    Step,
    Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeLabel {
    Intra,
    Inter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub label: EdgeLabel,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("equivalence pair references unknown step {0}")]
    UnknownStep(StepId),
    #[error("equivalence pair {0} ~ {1} links steps of the same chain")]
    SameChain(StepId, StepId),
    #[error("intra edges alone form a cycle")]
    IntraCycle,
}

/// Read access shared by the reasoning graph and the merged graph.
pub trait AnswerGraph {
    fn question_id(&self) -> &str;
    fn topology(&self) -> &Digraph;
    fn question(&self) -> usize;
    /// `(canonical answer, node index)`, sorted by answer.
    fn answers(&self) -> &[(String, usize)];
    /// Multiplicity carried by node `v`; 1 unless nodes were merged.
    fn weight(&self, v: usize) -> u64;

    fn answer_node(&self, canonical: &str) -> Option<usize> {
        self.answers()
            .iter()
            .find(|(key, _)| key == canonical)
            .map(|&(_, v)| v)
    }
}

/// Directed graph over one question's chains.
#[derive(Debug, Clone)]
pub struct ReasoningGraph {
    question_id: String,
    nodes: Vec<NodeId>,
    texts: Vec<String>,
    index: BTreeMap<NodeId, usize>,
    edges: Vec<Edge>,
    topology: Digraph,
    answers: Vec<(String, usize)>,
    /// Inter pairs in insertion order.
    pairs: Vec<EquivalencePair>,
    /// Intra edges, kept apart for the cycle policy.
    intra: Vec<(usize, usize)>,
}

impl ReasoningGraph {
    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn node(&self, v: usize) -> &NodeId {
        &self.nodes[v]
    }

    pub fn text(&self, v: usize) -> &str {
        &self.texts[v]
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// All directed edges, sorted by `(from, to)`.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn pairs(&self) -> &[EquivalencePair] {
        &self.pairs
    }

    pub fn inter_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.label == EdgeLabel::Inter).count()
    }

    fn step_index(&self, id: StepId) -> usize {
        self.index[&NodeId::Step(id)]
    }

    fn with_pairs(&self, pairs: Vec<EquivalencePair>) -> Self {
        let mut edges: Vec<Edge> = self
            .intra
            .iter()
            .map(|&(from, to)| Edge {
                from,
                to,
                label: EdgeLabel::Intra,
            })
            .collect();
        for pair in &pairs {
            let (a, b) = (self.step_index(pair.left), self.step_index(pair.right));
            edges.push(Edge { from: a, to: b, label: EdgeLabel::Inter });
            edges.push(Edge { from: b, to: a, label: EdgeLabel::Inter });
        }
        edges.sort();
        let topology =
            Digraph::from_edges(self.nodes.len(), edges.iter().map(|e| (e.from, e.to)));
        Self {
            edges,
            topology,
            pairs,
            ..self.clone()
        }
    }

    pub fn dump(&self) -> GraphDump {
        GraphDump {
            question_id: self.question_id.clone(),
            nodes: self
                .nodes
                .iter()
                .zip(&self.texts)
                .map(|(id, text)| DumpNode {
                    id: id.to_string(),
                    kind: id.kind(),
                    weight: 1,
                    text: text.clone(),
                    members: Vec::new(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| DumpEdge {
                    from: self.nodes[e.from].to_string(),
                    to: self.nodes[e.to].to_string(),
                    label: e.label,
                })
                .collect(),
        }
    }
}

impl AnswerGraph for ReasoningGraph {
    fn question_id(&self) -> &str {
        &self.question_id
    }

    fn topology(&self) -> &Digraph {
        &self.topology
    }

    fn question(&self) -> usize {
        0
    }

    fn answers(&self) -> &[(String, usize)] {
        &self.answers
    }

    fn weight(&self, _v: usize) -> u64 {
        1
    }
}

/// Builds the graph: the question node, every step, `Q -> s_i1`, consecutive
/// intra edges, `s_iT -> A_i` into deduplicated answer nodes, and both
/// directions of every equivalence pair.
pub fn build_graph(
    record: &QuestionRecord,
    pairs: &[EquivalencePair],
) -> Result<ReasoningGraph, GraphError> {
    let answers_keys = distinct_answers(record);
    let mut nodes = vec![NodeId::Question];
    let mut texts = vec![record.question_text().to_string()];
    for step in record.steps() {
        nodes.push(NodeId::Step(step.id()));
        texts.push(step.text().to_string());
    }
    for key in &answers_keys {
        nodes.push(NodeId::Answer(key.canonical.clone()));
        texts.push(key.canonical.clone());
    }
    let index: BTreeMap<NodeId, usize> =
        nodes.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();

    let mut intra = Vec::with_capacity(record.total_steps() + record.n());
    for chain in record.chains() {
        let mut prev = 0;
        for step in chain.steps() {
            let v = index[&NodeId::Step(step.id())];
            intra.push((prev, v));
            prev = v;
        }
        intra.push((prev, index[&NodeId::Answer(chain.answer_key())]));
    }

    let mut seen = HashSet::new();
    let mut kept = Vec::with_capacity(pairs.len());
    for pair in pairs {
        for id in [pair.left, pair.right] {
            if record.step(id).is_none() {
                return Err(GraphError::UnknownStep(id));
            }
        }
        if pair.left.chain == pair.right.chain {
            return Err(GraphError::SameChain(pair.left, pair.right));
        }
        let canonical = EquivalencePair::new(pair.left, pair.right, pair.source)
            .expect("chains differ");
        if seen.insert(canonical.endpoints()) {
            kept.push(canonical);
        }
    }

    let answers = answers_keys
        .iter()
        .map(|k| (k.canonical.clone(), index[&NodeId::Answer(k.canonical.clone())]))
        .collect();
    let skeleton = ReasoningGraph {
        question_id: record.question_id().to_string(),
        nodes,
        texts,
        index,
        edges: Vec::new(),
        topology: Digraph::default(),
        answers,
        pairs: Vec::new(),
        intra,
    };
    Ok(skeleton.with_pairs(kept))
}

/// Inter pairs dropped by [`finalize_acyclic`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RemovalReport {
    pub removed: Vec<EquivalencePair>,
}

impl RemovalReport {
    pub fn is_empty(&self) -> bool {
        self.removed.is_empty()
    }
}

/// Whether the intra edges, with nodes joined according to `uf`, still form a
/// DAG (no self-loops, no cycles).
fn quotient_is_acyclic(n: usize, intra: &[(usize, usize)], uf: &mut UnionFind) -> bool {
    let mut quotient = Vec::with_capacity(intra.len());
    for &(a, b) in intra {
        let (ra, rb) = (uf.find(a), uf.find(b));
        if ra == rb {
            return false;
        }
        quotient.push((ra, rb));
    }
    Digraph::from_edges(n, quotient).is_acyclic()
}

/// Admits pairs in order, rejecting each one whose union would close a cycle
/// through intra edges. Returns the admitted pairs, the rejected pairs, and
/// the final partition.
pub(crate) fn admit_pairs(
    graph: &ReasoningGraph,
) -> Result<(Vec<EquivalencePair>, Vec<EquivalencePair>, UnionFind), GraphError> {
    let n = graph.nodes.len();
    let mut uf = UnionFind::new(n);
    if !quotient_is_acyclic(n, &graph.intra, &mut uf) {
        return Err(GraphError::IntraCycle);
    }
    let mut admitted = Vec::new();
    let mut rejected = Vec::new();
    for pair in &graph.pairs {
        let (a, b) = (graph.step_index(pair.left), graph.step_index(pair.right));
        if uf.same(a, b) {
            admitted.push(*pair);
            continue;
        }
        let mut trial = uf.clone();
        trial.union(a, b);
        if quotient_is_acyclic(n, &graph.intra, &mut trial) {
            uf = trial;
            admitted.push(*pair);
        } else {
            rejected.push(*pair);
        }
    }
    Ok((admitted, rejected, uf))
}

/// Removes the inter edges that put intra edges on a directed cycle.
///
/// Pairs are considered in insertion order and a pair is dropped (both
/// directions) when joining its endpoints would create a cycle among
/// equivalence classes, so the latest-inserted pair on any loop is the one
/// discarded. Cycles made only of inter edges (a bidirectional pair, or a
/// clique of mutually equivalent steps) stay: they vanish on merging and
/// simple-path traversal never loops on them. Intra edges are never removed.
pub fn finalize_acyclic(
    graph: &ReasoningGraph,
) -> Result<(ReasoningGraph, RemovalReport), GraphError> {
    let (admitted, rejected, _) = admit_pairs(graph)?;
    if !rejected.is_empty() {
        log::debug!(
            "question {}: dropped {} inter pair(s) closing loops",
            graph.question_id,
            rejected.len()
        );
    }
    Ok((graph.with_pairs(admitted), RemovalReport { removed: rejected }))
}

/// JSON-friendly graph listing in canonical node order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphDump {
    pub question_id: String,
    pub nodes: Vec<DumpNode>,
    pub edges: Vec<DumpEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DumpNode {
    pub id: String,
    pub kind: NodeKind,
    pub weight: u64,
    pub text: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DumpEdge {
    pub from: String,
    pub to: String,
    pub label: EdgeLabel,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::equivalence::MatchSource;

    pub(crate) fn pair(a: (usize, usize), b: (usize, usize)) -> EquivalencePair {
        EquivalencePair::new(StepId::new(a.0, a.1), StepId::new(b.0, b.1), MatchSource::Exact)
            .unwrap()
    }

    /// Chains (s11, s12 -> A1), (s21, s22 -> A1), (s31 -> A2).
    pub(crate) fn g1_record() -> QuestionRecord {
        QuestionRecord::new(
            "g1",
            "Q",
            Some("A1".into()),
            vec![
                (vec!["s11", "s12"], "A1"),
                (vec!["s21", "s22"], "A1"),
                (vec!["s31"], "A2"),
            ],
        )
        .unwrap()
    }

    fn step(c: usize, s: usize) -> NodeId {
        NodeId::Step(StepId::new(c, s))
    }

    fn edge_set(g: &ReasoningGraph, label: EdgeLabel) -> Vec<(NodeId, NodeId)> {
        let mut v: Vec<_> = g
            .edges()
            .iter()
            .filter(|e| e.label == label)
            .map(|e| (g.node(e.from).clone(), g.node(e.to).clone()))
            .collect();
        v.sort();
        v
    }

    #[test]
    fn single_chain_graph() {
        let r = QuestionRecord::new("q", "Q", None, vec![(vec!["a", "b"], "4")]).unwrap();
        let g = build_graph(&r, &[]).unwrap();
        assert_eq!(
            g.nodes(),
            &[NodeId::Question, step(1, 1), step(1, 2), NodeId::Answer("4".into())]
        );
        let a = NodeId::Answer("4".into());
        assert_eq!(
            edge_set(&g, EdgeLabel::Intra),
            vec![
                (NodeId::Question, step(1, 1)),
                (step(1, 1), step(1, 2)),
                (step(1, 2), a)
            ]
        );
        assert_eq!(g.inter_edge_count(), 0);
    }

    #[test]
    fn answers_are_deduplicated() {
        let r = QuestionRecord::new(
            "q",
            "Q",
            None,
            vec![(vec!["a"], "4"), (vec!["b"], "\\boxed{4}"), (vec!["c"], "5")],
        )
        .unwrap();
        let g = build_graph(&r, &[]).unwrap();
        assert_eq!(g.answers().len(), 2);
        assert_eq!(g.topology().predecessors(g.answer_node("4").unwrap()).len(), 2);
    }

    #[test]
    fn g1_matches_hand_derivation() {
        let g = build_graph(&g1_record(), &[pair((1, 2), (2, 2))]).unwrap();
        assert_eq!(g.nodes().len(), 8);
        let (a1, a2) = (NodeId::Answer("a1".into()), NodeId::Answer("a2".into()));
        let mut expected = vec![
            (NodeId::Question, step(1, 1)),
            (step(1, 1), step(1, 2)),
            (step(1, 2), a1.clone()),
            (NodeId::Question, step(2, 1)),
            (step(2, 1), step(2, 2)),
            (step(2, 2), a1),
            (NodeId::Question, step(3, 1)),
            (step(3, 1), a2),
        ];
        expected.sort();
        assert_eq!(edge_set(&g, EdgeLabel::Intra), expected);
        assert_eq!(
            edge_set(&g, EdgeLabel::Inter),
            vec![(step(1, 2), step(2, 2)), (step(2, 2), step(1, 2))]
        );
    }

    #[test]
    fn unknown_step_is_rejected() {
        let err = build_graph(&g1_record(), &[pair((1, 3), (2, 1))]).unwrap_err();
        assert_eq!(err, GraphError::UnknownStep(StepId::new(1, 3)));
    }

    #[test]
    fn finalize_keeps_two_cycles() {
        let g = build_graph(&g1_record(), &[pair((1, 2), (2, 2))]).unwrap();
        let (f, report) = finalize_acyclic(&g).unwrap();
        assert!(report.is_empty());
        assert_eq!(f.edges(), g.edges());
    }

    #[test]
    fn finalize_breaks_loop_through_intra_edge() {
        // s11 -> s12 (intra), s12 <-> s22, s22 <-> s11: s11 -> s12 -> s22 -> s11.
        let g = build_graph(&g1_record(), &[pair((1, 2), (2, 2)), pair((2, 2), (1, 1))]).unwrap();
        let (f, report) = finalize_acyclic(&g).unwrap();
        assert_eq!(report.removed, vec![pair((1, 1), (2, 2))]);
        assert_eq!(f.inter_edge_count(), 2);
        assert_eq!(f.pairs(), &[pair((1, 2), (2, 2))]);
        // idempotent
        let (again, second) = finalize_acyclic(&f).unwrap();
        assert!(second.is_empty());
        assert_eq!(again.edges(), f.edges());
    }

    #[test]
    fn crossing_equivalences_drop_the_later_pair() {
        let r = QuestionRecord::new(
            "q",
            "Q",
            None,
            vec![(vec!["a", "b"], "1"), (vec!["b", "a"], "1")],
        )
        .unwrap();
        let g = build_graph(&r, &[pair((1, 1), (2, 2)), pair((1, 2), (2, 1))]).unwrap();
        let (f, report) = finalize_acyclic(&g).unwrap();
        assert_eq!(report.removed, vec![pair((1, 2), (2, 1))]);
        assert_eq!(f.pairs().len(), 1);
    }

    #[test]
    fn inter_cliques_are_kept() {
        let r = QuestionRecord::new(
            "q",
            "Q",
            None,
            vec![(vec!["s"], "1"), (vec!["s"], "1"), (vec!["s"], "2")],
        )
        .unwrap();
        let pairs = [pair((1, 1), (2, 1)), pair((1, 1), (3, 1)), pair((2, 1), (3, 1))];
        let g = build_graph(&r, &pairs).unwrap();
        let (f, report) = finalize_acyclic(&g).unwrap();
        assert!(report.is_empty());
        assert_eq!(f.inter_edge_count(), 6);
    }

    #[test]
    fn dump_uses_canonical_order() {
        let g = build_graph(&g1_record(), &[pair((1, 2), (2, 2))]).unwrap();
        let json = serde_json::to_value(g.dump()).unwrap();
        assert_eq!(json["nodes"][0]["id"], "Q");
        assert_eq!(json["nodes"][1]["id"], "s1_1");
        assert_eq!(json["nodes"][7]["id"], "A:a2");
        assert_eq!(json["edges"].as_array().unwrap().len(), 10);
        assert_eq!(json["edges"][0]["from"], "Q");
    }
}
