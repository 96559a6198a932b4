use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, TokenGraph};
use crate::TokenId;

/// Per-n counts of tree nodes lying in a re-occurring n-gram window.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OverlapStats {
    /// `covered[n - 1]` nodes out of `total` lie in a recurring n-window.
    pub covered: Vec<u64>,
    pub total: u64,
}

impl OverlapStats {
    pub fn n_max(&self) -> usize {
        self.covered.len()
    }

    pub fn fraction(&self, n: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.covered[n - 1] as f64 / self.total as f64
        }
    }

    /// Pools counts from another tree.
    pub fn absorb(&mut self, other: &OverlapStats) {
        if self.covered.len() < other.covered.len() {
            self.covered.resize(other.covered.len(), 0);
        }
        for (a, b) in self.covered.iter_mut().zip(&other.covered) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,covered,total,fraction\n");
        for n in 1..=self.n_max() {
            s += &format!("{n},{},{},{}\n", self.covered[n - 1], self.total, self.fraction(n));
        }
        s
    }
}

/// A window is a downward path of `n` nodes. It re-occurs if another window
/// with the same tokens starts at a node that is neither the same node nor
/// an ancestor or descendant of its start. Every node of a re-occurring
/// window is counted once. Merge edges are ignored.
pub fn ngram_overlap(tree: &TokenGraph, n_max: usize) -> OverlapStats {
    let total = tree.len() as u64 - 1;
    let mut covered = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut groups: HashMap<Vec<TokenId>, Vec<Vec<NodeId>>> = HashMap::new();
        for node in tree.drafted().filter(|d| d.depth >= n) {
            let mut w = Vec::with_capacity(n);
            let mut cur = node.id;
            for _ in 0..n {
                w.push(cur);
                cur = tree.node(cur).parent.expect("depth >= n");
            }
            w.reverse();
            let tokens = w.iter().map(|&i| tree.node(i).token).collect();
            groups.entry(tokens).or_default().push(w);
        }
        let mut hit = vec![false; tree.len()];
        for windows in groups.values().filter(|g| g.len() > 1) {
            for (i, a) in windows.iter().enumerate() {
                let recurs = windows.iter().enumerate().any(|(j, b)| {
                    i != j
                        && a[0] != b[0]
                        && !tree.is_ancestor(a[0], b[0])
                        && !tree.is_ancestor(b[0], a[0])
                });
                if recurs {
                    a.iter().for_each(|x| hit[x.index()] = true);
                }
            }
        }
        covered.push(hit.iter().filter(|&&h| h).count() as u64);
    }
    OverlapStats { covered, total }
}
