use std::collections::BTreeMap;

use super::{
    admit_pairs, AnswerGraph, Digraph, DumpEdge, DumpNode, EdgeLabel, GraphDump, GraphError,
    NodeId, NodeKind, ReasoningGraph,
};
use crate::equivalence::EquivalencePair;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedNode {
    pub kind: NodeKind,
    /// Original nodes collapsed into this one, in canonical order.
    pub members: Vec<NodeId>,
    pub weight: u64,
}

/// Quotient of a reasoning graph by step equivalence. Step classes weigh as
/// many as the steps they absorbed; the question and answers weigh 1.
#[derive(Debug, Clone)]
pub struct MergedGraph {
    question_id: String,
    nodes: Vec<MergedNode>,
    topology: Digraph,
    answers: Vec<(String, usize)>,
    dropped: Vec<EquivalencePair>,
}

impl MergedGraph {
    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn nodes(&self) -> &[MergedNode] {
        &self.nodes
    }

    /// Index of the class holding `id`.
    pub fn class_of(&self, id: &NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.members.contains(id))
    }

    /// Pairs that could not be merged without creating a cycle.
    pub fn dropped_pairs(&self) -> &[EquivalencePair] {
        &self.dropped
    }

    pub fn step_weight_total(&self) -> u64 {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Step)
            .map(|n| n.weight)
            .sum()
    }

    /// Same topology with every weight set to 1.
    pub fn with_unit_weights(&self) -> Self {
        let mut out = self.clone();
        for node in &mut out.nodes {
            node.weight = 1;
        }
        out
    }

    fn label(&self, v: usize) -> String {
        match self.nodes[v].kind {
            NodeKind::Question => "Q".to_string(),
            NodeKind::Answer => self.nodes[v].members[0].to_string(),
            NodeKind::Step => format!("m{v}"),
        }
    }

    pub fn dump(&self) -> GraphDump {
        GraphDump {
            question_id: self.question_id.clone(),
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(v, node)| DumpNode {
                    id: self.label(v),
                    kind: node.kind,
                    weight: node.weight,
                    text: String::new(),
                    members: node.members.iter().map(ToString::to_string).collect(),
                })
                .collect(),
            edges: self
                .topology
                .edges()
                .map(|(from, to)| DumpEdge {
                    from: self.label(from),
                    to: self.label(to),
                    label: EdgeLabel::Intra,
                })
                .collect(),
        }
    }
}

impl AnswerGraph for MergedGraph {
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

    fn weight(&self, v: usize) -> u64 {
        self.nodes[v].weight
    }
}

/// Collapses each connected set of equivalent steps into one node.
///
/// Uses the graph's inter pairs under the same admission rule as
/// [`super::finalize_acyclic`], so the result is a DAG even when `graph` was
/// not finalized first. Edges are rewritten onto classes with self-loops
/// dropped and duplicates merged.
pub fn merge_equivalent(graph: &ReasoningGraph) -> Result<MergedGraph, GraphError> {
    let (_, dropped, mut uf) = admit_pairs(graph)?;
    let n = graph.nodes().len();

    // Class order follows the smallest member, which keeps the canonical
    // question / steps / answers ordering.
    let mut class_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut class_of = vec![0; n];
    let mut nodes: Vec<MergedNode> = Vec::new();
    for (v, slot) in class_of.iter_mut().enumerate() {
        let root = uf.find(v);
        let class = *class_of_root.entry(root).or_insert_with(|| {
            nodes.push(MergedNode {
                kind: graph.node(v).kind(),
                members: Vec::new(),
                weight: 0,
            });
            nodes.len() - 1
        });
        nodes[class].members.push(graph.node(v).clone());
        *slot = class;
    }
    for node in &mut nodes {
        node.weight = match node.kind {
            NodeKind::Step => node.members.len() as u64,
            NodeKind::Question | NodeKind::Answer => 1,
        };
    }

    let edges = graph
        .intra
        .iter()
        .map(|&(a, b)| (class_of[a], class_of[b]))
        .filter(|(a, b)| a != b);
    let topology = Digraph::from_edges(nodes.len(), edges);
    debug_assert!(topology.is_acyclic());

    let answers = graph
        .answers()
        .iter()
        .map(|(key, v)| (key.clone(), class_of[*v]))
        .collect();
    Ok(MergedGraph {
        question_id: graph.question_id().to_string(),
        nodes,
        topology,
        answers,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::{g1_record, pair};
    use super::super::{build_graph, finalize_acyclic};
    use super::*;
    use crate::chain::{QuestionRecord, StepId};

    fn step(c: usize, s: usize) -> NodeId {
        NodeId::Step(StepId::new(c, s))
    }

    #[test]
    fn merged_g1() {
        let g = build_graph(&g1_record(), &[pair((1, 2), (2, 2))]).unwrap();
        let m = merge_equivalent(&g).unwrap();
        // Q, {s11}, {s12,s22}, {s21}, {s31}, A1, A2
        assert_eq!(m.nodes().len(), 7);
        let merged = m.class_of(&step(1, 2)).unwrap();
        assert_eq!(m.class_of(&step(2, 2)), Some(merged));
        assert_eq!(m.nodes()[merged].weight, 2);
        assert_eq!(m.nodes()[merged].members, vec![step(1, 2), step(2, 2)]);

        let c = |id: NodeId| m.class_of(&id).unwrap();
        let (a1, a2) = (c(NodeId::Answer("a1".into())), c(NodeId::Answer("a2".into())));
        let mut expected = vec![
            (0, c(step(1, 1))),
            (c(step(1, 1)), merged),
            (0, c(step(2, 1))),
            (c(step(2, 1)), merged),
            (merged, a1),
            (0, c(step(3, 1))),
            (c(step(3, 1)), a2),
        ];
        expected.sort();
        let got: Vec<_> = m.topology().edges().collect();
        assert_eq!(got, expected);
        assert_eq!(m.step_weight_total(), 5);
    }

    #[test]
    fn no_pairs_is_identity_quotient() {
        let g = build_graph(&g1_record(), &[]).unwrap();
        let m = merge_equivalent(&g).unwrap();
        assert_eq!(m.nodes().len(), g.nodes().len());
        assert!(m.nodes().iter().all(|n| n.weight == 1));
        let original: Vec<_> = g.topology().edges().collect();
        let merged: Vec<_> = m.topology().edges().collect();
        assert_eq!(original, merged);
    }

    #[test]
    fn identical_chains_collapse_to_one_weighted_chain() {
        let r = QuestionRecord::new(
            "q",
            "Q",
            None,
            vec![(vec!["a", "b", "c"], "7"), (vec!["a", "b", "c"], "7")],
        )
        .unwrap();
        let pairs = [pair((1, 1), (2, 1)), pair((1, 2), (2, 2)), pair((1, 3), (2, 3))];
        let g = build_graph(&r, &pairs).unwrap();
        let m = merge_equivalent(&g).unwrap();
        // oracle: union-find by hand gives {a,a'},{b,b'},{c,c'}
        assert_eq!(m.nodes().len(), 5);
        let weights: Vec<u64> = m.nodes().iter().map(|n| n.weight).collect();
        assert_eq!(weights, vec![1, 2, 2, 2, 1]);
        let edges: Vec<_> = m.topology().edges().collect();
        assert_eq!(edges, vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn merge_applies_cycle_policy_on_unfinalized_graphs() {
        let g = build_graph(&g1_record(), &[pair((1, 2), (2, 2)), pair((2, 2), (1, 1))]).unwrap();
        let m = merge_equivalent(&g).unwrap();
        assert_eq!(m.dropped_pairs(), &[pair((1, 1), (2, 2))]);
        assert!(m.topology().is_acyclic());
        let (f, _) = finalize_acyclic(&g).unwrap();
        let mf = merge_equivalent(&f).unwrap();
        assert_eq!(mf.nodes(), m.nodes());
    }
}
