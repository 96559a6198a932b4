//! Line-oriented graph dump.
//!
//! ```text
//! #graph k=4 depth_limit=10 tau=2
//! 1  0  17  0.61  expandable  -
//! 2  0  5  0.22  leaf-pruned-sibling  -
//! 3  1  9  0.4  leaf-merged  1
//! ```
//!
//! One node per line in creation order, tab separated: id, parent, token,
//! q_prob, status, merge target (`-` when absent). The root is implicit.

use crate::error::{Error, Result};
use crate::graph::{NodeId, NodeStatus, TokenGraph};

const HEADER: &str = "#graph";

pub fn graph_lines(graph: &TokenGraph) -> Vec<String> {
    let mut out = Vec::with_capacity(graph.len());
    out.push(format!(
        "{HEADER} k={} depth_limit={} tau={}",
        graph.k(),
        graph.depth_limit(),
        graph.tau()
    ));
    for n in graph.drafted() {
        let target = n.merge_target.map_or_else(|| "-".to_string(), |t| t.to_string());
        out.push(format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            n.id,
            n.parent.expect("non-root").0,
            n.token,
            n.q_prob,
            n.status.as_str(),
            target
        ));
    }
    out
}

pub fn parse_graph_lines<S: AsRef<str>>(lines: &[S]) -> Result<TokenGraph> {
    let err = |msg: String| Error::Trace(msg);
    let header = lines.first().ok_or_else(|| err("empty graph dump".into()))?.as_ref();
    let body = header
        .strip_prefix(HEADER)
        .ok_or_else(|| err(format!("bad graph header {header:?}")))?;
    let (mut k, mut limit, mut tau) = (None, None, None);
    for kv in body.split_whitespace() {
        let (key, val) = kv.split_once('=').ok_or_else(|| err(format!("bad field {kv:?}")))?;
        let val: usize = val.parse().map_err(|_| err(format!("bad value in {kv:?}")))?;
        match key {
            "k" => k = Some(val),
            "depth_limit" => limit = Some(val),
            "tau" => tau = Some(val),
            _ => return Err(err(format!("unknown header field {key:?}"))),
        }
    }
    let (Some(k), Some(limit), Some(tau)) = (k, limit, tau) else {
        return Err(err("graph header missing k, depth_limit or tau".into()));
    };
    let mut g = TokenGraph::new(k, limit, tau);
    for (lineno, line) in lines[1..].iter().enumerate() {
        let line = line.as_ref();
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(err(format!("line {}: expected 6 fields", lineno + 2)));
        }
        let bad = |what: &str| err(format!("line {}: bad {what}", lineno + 2));
        let id: u32 = f[0].parse().map_err(|_| bad("id"))?;
        let parent: u32 = f[1].parse().map_err(|_| bad("parent"))?;
        let token = f[2].parse().map_err(|_| bad("token"))?;
        let q: f64 = f[3].parse().map_err(|_| bad("q_prob"))?;
        let status = NodeStatus::parse(f[4]).ok_or_else(|| bad("status"))?;
        let target = match f[5] {
            "-" => None,
            s => Some(NodeId(s.parse().map_err(|_| bad("merge target"))?)),
        };
        if id as usize != g.len() || parent as usize >= g.len() {
            return Err(bad("node order"));
        }
        let nid = g.add_child(NodeId(parent), token, q, status);
        if let Some(t) = target {
            let n = g.node_mut(nid);
            n.merge_target = Some(t);
            n.dist_source = t;
        }
    }
    g.validate()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let mut g = TokenGraph::new(2, 4, 1);
        let y = g.add_child(NodeId::ROOT, 3, 0.625, NodeStatus::Expandable);
        let w = g.add_child(NodeId::ROOT, 4, 0.1 + 0.2, NodeStatus::Expandable);
        g.add_child(y, 9, 0.5, NodeStatus::LeafPrunedSibling);
        let x = g.add_child(w, 3, 0.25, NodeStatus::LeafMerged);
        g.node_mut(x).merge_target = Some(y);
        g.node_mut(x).dist_source = y;
        let lines = graph_lines(&g);
        assert_eq!(lines[4], "4\t2\t3\t0.25\tleaf-merged\t1");
        let back = parse_graph_lines(&lines).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_graph_lines(&["nope"]).is_err());
        assert!(parse_graph_lines(&["#graph k=2 depth_limit=3 tau=1", "1\t0\t3"]).is_err());
        assert!(parse_graph_lines(&["#graph k=2 depth_limit=3 tau=1", "2\t0\t3\t0.5\texpandable\t-"]).is_err());
    }
}
