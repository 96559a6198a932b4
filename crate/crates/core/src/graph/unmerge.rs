use crate::graph::{DraftNode, NodeId, NodeStatus, TokenGraph};

/// Reverts a token graph to a tree. Each merged node, in creation order,
/// receives a copy of its merge target's descendants. Copies keep the source
/// probabilities, carry `shared_logits`, and are cut at the depth limit. Copied
/// merged nodes are unmerged in turn when the scan reaches them.
pub fn unmerge(graph: &TokenGraph) -> TokenGraph {
    let mut tree = graph.clone();
    let limit = tree.depth_limit();
    let mut i = 1;
    while i < tree.len() {
        let id = NodeId(i as u32);
        if let Some(target) = tree.node(id).merge_target {
            let template: Vec<NodeId> = tree.node(target).children.clone();
            {
                let n = tree.node_mut(id);
                n.merge_target = None;
                n.status = NodeStatus::Expandable;
            }
            for child in template {
                graft(&mut tree, child, id, limit);
            }
        }
        i += 1;
    }
    tree
}

fn graft(tree: &mut TokenGraph, src: NodeId, parent: NodeId, limit: usize) {
    let depth = tree.node(parent).depth + 1;
    if depth > limit {
        return;
    }
    let s = tree.node(src).clone();
    let open = matches!(s.status, NodeStatus::Expandable | NodeStatus::LeafMerged);
    let (status, merge_target) = if depth == limit && open {
        (NodeStatus::LeafDepth, None)
    } else {
        (s.status, s.merge_target)
    };
    let copy = tree.push_raw(DraftNode {
        id: NodeId(0),
        token: s.token,
        q_prob: s.q_prob,
        parent: Some(parent),
        children: Vec::new(),
        status,
        merge_target,
        shared_logits: true,
        depth,
        rank: s.rank,
        dist_source: s.dist_source,
    });
    for child in s.children {
        graft(tree, child, copy, limit);
    }
}
