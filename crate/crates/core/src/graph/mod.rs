//! Token trees and token graphs built during a draft stage.
//!
//! Node 0 is a virtual root standing for the committed context. Every other
//! node holds one drafted token. Parent edges form a tree; a node marked
//! [`NodeStatus::LeafMerged`] additionally carries a merge edge pointing to an
//! earlier node whose subtree it shares.

mod flatten;
mod trace;
mod unmerge;

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

pub use flatten::{flatten, AttentionMask, FlattenedBatch};
pub use trace::{parse_graph_lines, graph_lines};
pub use unmerge::unmerge;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_root(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    Expandable,
    LeafPrunedProb,
    LeafPrunedSibling,
    LeafDepth,
    LeafMerged,
}

impl NodeStatus {
    pub fn is_leaf(self) -> bool {
        !matches!(self, NodeStatus::Expandable)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeStatus::Expandable => "expandable",
            NodeStatus::LeafPrunedProb => "leaf-pruned-prob",
            NodeStatus::LeafPrunedSibling => "leaf-pruned-sibling",
            NodeStatus::LeafDepth => "leaf-depth",
            NodeStatus::LeafMerged => "leaf-merged",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "expandable" => NodeStatus::Expandable,
            "leaf-pruned-prob" => NodeStatus::LeafPrunedProb,
            "leaf-pruned-sibling" => NodeStatus::LeafPrunedSibling,
            "leaf-depth" => NodeStatus::LeafDepth,
            "leaf-merged" => NodeStatus::LeafMerged,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DraftNode {
    pub id: NodeId,
    /// Unused for the root.
    pub token: TokenId,
    /// Draft probability of `token` under the context that generated it.
    pub q_prob: f64,
    pub parent: Option<NodeId>,
    /// Ordered by descending `q_prob`, ties toward the lower token id.
    pub children: Vec<NodeId>,
    pub status: NodeStatus,
    pub merge_target: Option<NodeId>,
    /// Set on nodes replicated from a merge target's subtree.
    pub shared_logits: bool,
    pub depth: usize,
    /// 1-based position among siblings; 0 for the root.
    pub rank: usize,
    /// Drafted node whose next-token distribution produced this node's
    /// children. Equals `id` unless the children are shared through a merge.
    pub dist_source: NodeId,
}

/// One root-to-leaf drafted sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub q_probs: Vec<f64>,
}

impl Hypothesis {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenGraph {
    nodes: Vec<DraftNode>,
    k: usize,
    depth_limit: usize,
    tau: usize,
    pub(crate) tau_index: HashMap<Vec<TokenId>, NodeId>,
}

/// Upper bound on the node count of a tree with out-degree `k` and depth `gamma`,
/// root included. Saturates at `u64::MAX`.
pub fn max_node_count(k: u64, gamma: u32) -> u64 {
    if k <= 1 {
        return gamma as u64 + 1;
    }
    let k = k as u128;
    match k.checked_pow(gamma + 1) {
        Some(p) => u64::try_from((p - 1) / (k - 1)).unwrap_or(u64::MAX),
        None => u64::MAX,
    }
}

impl TokenGraph {
    pub fn new(k: usize, depth_limit: usize, tau: usize) -> Self {
        let root = DraftNode {
            id: NodeId::ROOT,
            token: 0,
            q_prob: 1.0,
            parent: None,
            children: Vec::new(),
            status: NodeStatus::Expandable,
            merge_target: None,
            shared_logits: false,
            depth: 0,
            rank: 0,
            dist_source: NodeId::ROOT,
        };
        Self { nodes: vec![root], k, depth_limit, tau, tau_index: HashMap::new() }
    }

    /// A chain holding `hyp`, each node a child of the previous one.
    pub fn from_hypothesis(hyp: &Hypothesis, depth_limit: usize) -> Self {
        let mut g = TokenGraph::new(1, depth_limit.max(hyp.len()), 1);
        let mut parent = NodeId::ROOT;
        for (i, (&tok, &q)) in hyp.tokens.iter().zip(&hyp.q_probs).enumerate() {
            let status =
                if i + 1 == hyp.len() { NodeStatus::LeafDepth } else { NodeStatus::Expandable };
            parent = g.add_child(parent, tok, q, status);
        }
        g
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn depth_limit(&self) -> usize {
        self.depth_limit
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Node count including the root.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn node(&self, id: NodeId) -> &DraftNode {
        &self.nodes[id.index()]
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> &mut DraftNode {
        &mut self.nodes[id.index()]
    }

    pub fn root(&self) -> &DraftNode {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[DraftNode] {
        &self.nodes
    }

    /// All nodes except the root, in creation order.
    pub fn drafted(&self) -> impl Iterator<Item = &DraftNode> {
        self.nodes[1..].iter()
    }

    pub fn add_child(
        &mut self,
        parent: NodeId,
        token: TokenId,
        q_prob: f64,
        status: NodeStatus,
    ) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        let (depth, rank) = {
            let p = &self.nodes[parent.index()];
            (p.depth + 1, p.children.len() + 1)
        };
        self.nodes.push(DraftNode {
            id,
            token,
            q_prob,
            parent: Some(parent),
            children: Vec::new(),
            status,
            merge_target: None,
            shared_logits: false,
            depth,
            rank,
            dist_source: id,
        });
        self.nodes[parent.index()].children.push(id);
        id
    }

    pub(crate) fn push_raw(&mut self, mut node: DraftNode) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        node.id = id;
        if let Some(p) = node.parent {
            self.nodes[p.index()].children.push(id);
        }
        self.nodes.push(node);
        id
    }

    /// Strict ancestors of `id`, nearest first, the root excluded.
    pub fn ancestors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(self.node(id).parent, move |p| self.node(*p).parent)
            .filter(|p| !p.is_root())
    }

    /// True if `a` is a strict ancestor of `b`. The root is an ancestor of all.
    pub fn is_ancestor(&self, a: NodeId, b: NodeId) -> bool {
        if a == b {
            return false;
        }
        if a.is_root() {
            return true;
        }
        let da = self.node(a).depth;
        let mut cur = b;
        while self.node(cur).depth > da {
            cur = self.node(cur).parent.expect("non-root has parent");
        }
        cur == a
    }

    /// Tokens from the root (exclusive) down to `id` (inclusive).
    pub fn path_tokens(&self, id: NodeId) -> Vec<TokenId> {
        let mut path: Vec<TokenId> = Vec::with_capacity(self.node(id).depth);
        let mut cur = id;
        while !cur.is_root() {
            let n = self.node(cur);
            path.push(n.token);
            cur = n.parent.expect("non-root has parent");
        }
        path.reverse();
        path
    }

    /// Node ids from the root (exclusive) down to `id` (inclusive).
    pub fn path_nodes(&self, id: NodeId) -> Vec<NodeId> {
        let mut path: Vec<NodeId> = self.ancestors(id).collect();
        path.reverse();
        if !id.is_root() {
            path.push(id);
        }
        path
    }

    /// The last `tau` drafted tokens on the path to `id`, if the node is deep
    /// enough. Committed context tokens never take part.
    pub fn trailing_ngram(&self, id: NodeId, tau: usize) -> Option<Vec<TokenId>> {
        assert!(tau >= 1, "tau must be at least 1");
        if id.is_root() || self.node(id).depth < tau {
            return None;
        }
        let mut gram = Vec::with_capacity(tau);
        let mut cur = id;
        for _ in 0..tau {
            let n = self.node(cur);
            gram.push(n.token);
            cur = n.parent.expect("depth >= tau");
        }
        gram.reverse();
        Some(gram)
    }

    /// Nodes whose distribution the draft model computed in this stage: every
    /// non-root node except copies grafted in by [`unmerge`].
    pub fn drafted_token_count(&self) -> usize {
        self.drafted().filter(|n| !n.shared_logits).count()
    }

    pub fn merged_count(&self) -> usize {
        self.drafted().filter(|n| n.status == NodeStatus::LeafMerged).count()
    }

    pub fn has_merges(&self) -> bool {
        self.drafted().any(|n| n.merge_target.is_some())
    }

    /// True if `to` can be reached from `from` by following child and merge edges.
    pub fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        self.reaches_any(from, |n| n == to)
    }

    pub(crate) fn reaches_any(&self, from: NodeId, mut hit: impl FnMut(NodeId) -> bool) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut seen[n.index()], true) {
                continue;
            }
            if hit(n) {
                return true;
            }
            let node = self.node(n);
            stack.extend(node.children.iter().copied());
            stack.extend(node.merge_target);
        }
        false
    }

    /// Topological order over parent and merge edges, or `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<NodeId>> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        for node in &self.nodes {
            for c in &node.children {
                indegree[c.index()] += 1;
            }
            if let Some(t) = node.merge_target {
                indegree[t.index()] += 1;
            }
        }
        let mut queue: VecDeque<NodeId> =
            (0..n).filter(|&i| indegree[i] == 0).map(|i| NodeId(i as u32)).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(id) = queue.pop_front() {
            order.push(id);
            let node = self.node(id);
            for &next in node.children.iter().chain(node.merge_target.iter()) {
                indegree[next.index()] -= 1;
                if indegree[next.index()] == 0 {
                    queue.push_back(next);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Every root-to-leaf path through parent edges.
    pub fn hypotheses(&self) -> Vec<Hypothesis> {
        self.drafted()
            .filter(|n| n.children.is_empty())
            .map(|leaf| {
                let path = self.path_nodes(leaf.id);
                Hypothesis {
                    tokens: path.iter().map(|&i| self.node(i).token).collect(),
                    q_probs: path.iter().map(|&i| self.node(i).q_prob).collect(),
                }
            })
            .collect()
    }

    /// Checks the structural invariants of a draft graph.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::MalformedTree(msg));
        for node in self.drafted() {
            let parent = match node.parent {
                Some(p) if p < node.id => p,
                _ => return bad(format!("node {} has no earlier parent", node.id)),
            };
            if self.node(parent).depth + 1 != node.depth {
                return bad(format!("node {} depth mismatch", node.id));
            }
            if node.depth > self.depth_limit {
                return bad(format!("node {} exceeds depth limit {}", node.id, self.depth_limit));
            }
            if !(0.0..=1.0).contains(&node.q_prob) {
                return bad(format!("node {} q_prob {} out of range", node.id, node.q_prob));
            }
            match (node.status, node.merge_target) {
                (NodeStatus::LeafMerged, Some(t)) if t < node.id => {}
                (NodeStatus::LeafMerged, _) => {
                    return bad(format!("merged node {} lacks a backward target", node.id))
                }
                (_, Some(_)) => return bad(format!("node {} has stray merge edge", node.id)),
                _ => {}
            }
        }
        for node in &self.nodes {
            for pair in node.children.windows(2) {
                let (a, b) = (self.node(pair[0]), self.node(pair[1]));
                if a.q_prob < b.q_prob || (a.q_prob == b.q_prob && a.token > b.token) {
                    return bad(format!("children of {} out of order", node.id));
                }
            }
            let mut toks: Vec<TokenId> =
                node.children.iter().map(|&c| self.node(c).token).collect();
            toks.sort_unstable();
            if toks.windows(2).any(|w| w[0] == w[1]) {
                return bad(format!("children of {} repeat a token", node.id));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn chain(tokens: &[TokenId]) -> TokenGraph {
        let mut g = TokenGraph::new(1, 10, 2);
        let mut p = NodeId::ROOT;
        for &t in tokens {
            p = g.add_child(p, t, 0.9, NodeStatus::Expandable);
        }
        g
    }

    #[test]
    fn node_count_bound() {
        assert_eq!(max_node_count(2, 3), 15);
        assert_eq!(max_node_count(1, 5), 6);
        assert_eq!(max_node_count(4, 10), 1_398_101);
        assert_eq!(max_node_count(3, 0), 1);
        assert_eq!(max_node_count(1000, 40), u64::MAX);
    }

    #[test]
    fn trailing_ngrams() {
        // the=1 cat=2 sat=3
        let g = chain(&[1, 2, 3]);
        assert_eq!(g.trailing_ngram(NodeId(3), 2), Some(vec![2, 3]));
        assert_eq!(g.trailing_ngram(NodeId(1), 2), None);
        let g = chain(&[5, 5, 5]);
        assert_eq!(g.trailing_ngram(NodeId(3), 3), Some(vec![5, 5, 5]));
    }

    #[test]
    fn drafted_count_excludes_shared_copies() {
        let mut g = chain(&[1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(g.drafted_token_count(), 7);
        g.node_mut(NodeId(7)).shared_logits = true;
        assert_eq!(g.drafted_token_count(), 6);
    }

    #[test]
    fn ancestry() {
        let mut g = TokenGraph::new(2, 5, 1);
        let a = g.add_child(NodeId::ROOT, 1, 0.6, NodeStatus::Expandable);
        let c = g.add_child(NodeId::ROOT, 3, 0.4, NodeStatus::Expandable);
        let b = g.add_child(a, 2, 0.9, NodeStatus::Expandable);
        assert!(g.is_ancestor(a, b));
        assert!(!g.is_ancestor(b, a));
        assert!(!g.is_ancestor(c, b));
        assert!(g.is_ancestor(NodeId::ROOT, c));
        assert_eq!(g.path_tokens(b), vec![1, 2]);
        assert_eq!(g.node(c).rank, 2);
        assert!(g.validate().is_ok());
        assert_eq!(g.hypotheses().len(), 2);
    }

    #[test]
    fn validate_catches_repeated_sibling_tokens() {
        let mut g = TokenGraph::new(2, 5, 1);
        g.add_child(NodeId::ROOT, 1, 0.5, NodeStatus::Expandable);
        g.add_child(NodeId::ROOT, 1, 0.5, NodeStatus::Expandable);
        assert!(g.validate().is_err());
    }

    #[test]
    fn cycle_detected_by_topological_sort() {
        let mut g = TokenGraph::new(2, 5, 1);
        let w = g.add_child(NodeId::ROOT, 1, 0.5, NodeStatus::Expandable);
        let y = g.add_child(NodeId::ROOT, 2, 0.5, NodeStatus::Expandable);
        let x = g.add_child(w, 2, 0.5, NodeStatus::LeafMerged);
        g.node_mut(x).merge_target = Some(y);
        assert!(g.topological_order().is_some());
        let z = g.add_child(y, 1, 0.5, NodeStatus::LeafMerged);
        g.node_mut(z).merge_target = Some(w);
        assert!(g.topological_order().is_none());
    }
}
