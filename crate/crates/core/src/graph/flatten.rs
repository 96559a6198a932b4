//! Tree attention: a token tree laid out as one sequence plus a mask that lets
//! each position see only itself and its ancestors. All positions also see the
//! whole committed prompt, which the mask leaves implicit.

use crate::error::{Error, Result};
use crate::graph::{NodeId, TokenGraph};
use crate::TokenId;

/// Row-sparse boolean mask. Row `i` lists, in ascending order, every position
/// `j` with `mask[i][j] = 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    rows: Vec<Vec<u32>>,
}

impl AttentionMask {
    pub fn from_rows(rows: Vec<Vec<u32>>) -> Self {
        Self { rows }
    }

    pub fn from_dense(dense: &[Vec<bool>]) -> Self {
        let rows = dense
            .iter()
            .map(|r| r.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j as u32).collect())
            .collect();
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.rows[i].binary_search(&(j as u32)).is_ok()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.rows[i]
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        let n = self.rows.len();
        self.rows
            .iter()
            .map(|r| {
                let mut dense = vec![false; n];
                for &j in r {
                    dense[j as usize] = true;
                }
                dense
            })
            .collect()
    }

    /// Accepts exactly the masks that are the ancestor closure of some forest
    /// laid out parents-first: each row is strictly lower-triangular plus the
    /// diagonal, and equals its nearest attended position's row plus itself.
    pub fn validate(&self) -> Result<()> {
        let n = self.rows.len();
        for (i, row) in self.rows.iter().enumerate() {
            if row.last() != Some(&(i as u32)) {
                return Err(Error::InvalidMask(format!(
                    "row {i} must attend to itself and nothing after it"
                )));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&j| j as usize >= n) {
                return Err(Error::InvalidMask(format!("row {i} is not sorted and in range")));
            }
            if row.len() >= 2 {
                let parent = row[row.len() - 2] as usize;
                if self.rows[parent][..] != row[..row.len() - 1] {
                    return Err(Error::InvalidMask(format!(
                        "row {i} attends to a non-ancestor of position {parent}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedBatch {
    /// Node ids in layout order; parents precede children.
    pub positions: Vec<NodeId>,
    pub tokens: Vec<TokenId>,
    pub mask: AttentionMask,
}

impl FlattenedBatch {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens of position `i`'s ancestors followed by its own token.
    pub fn ancestor_path(&self, i: usize) -> Vec<TokenId> {
        self.mask.row(i).iter().map(|&j| self.tokens[j as usize]).collect()
    }

    /// Builds a batch straight from tokens and a mask, without node ids.
    pub fn from_parts(tokens: Vec<TokenId>, mask: AttentionMask) -> Self {
        let positions = (1..=tokens.len() as u32).map(NodeId).collect();
        Self { positions, tokens, mask }
    }
}

/// Lays out every non-root node in creation order, following parent edges.
/// Merge edges are not part of the layout.
pub fn flatten(graph: &TokenGraph) -> FlattenedBatch {
    let n = graph.len() - 1;
    let mut positions = Vec::with_capacity(n);
    let mut tokens = Vec::with_capacity(n);
    let mut rows: Vec<Vec<u32>> = Vec::with_capacity(n);
    // creation order: node id k sits at position k - 1
    for node in graph.drafted() {
        let pos = positions.len() as u32;
        let parent = node.parent.expect("non-root node has a parent");
        let mut row = if parent.is_root() {
            Vec::with_capacity(1)
        } else {
            rows[parent.index() - 1].clone()
        };
        row.push(pos);
        positions.push(node.id);
        tokens.push(node.token);
        rows.push(row);
    }
    FlattenedBatch { positions, tokens, mask: AttentionMask::from_rows(rows) }
}
