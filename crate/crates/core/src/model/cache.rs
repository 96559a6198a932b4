use std::collections::HashMap;
use std::sync::Arc;

use crate::dist::Distribution;
use crate::graph::NodeId;

/// Logical KV-cache bookkeeping for one decoding session.
///
/// Tracks how much of the committed context each model has cached, and
/// memoizes the draft distributions computed at each node during the current
/// draft stage.
#[derive(Debug, Clone, Default)]
pub struct KVCacheState {
    draft_prefix: usize,
    target_prefix: usize,
    memo: HashMap<NodeId, Arc<Distribution>>,
}

impl KVCacheState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn draft_prefix(&self) -> usize {
        self.draft_prefix
    }

    pub fn target_prefix(&self) -> usize {
        self.target_prefix
    }

    /// Marks both caches as holding the first `len` committed tokens.
    pub fn advance(&mut self, len: usize) {
        self.draft_prefix = len;
        self.target_prefix = len;
    }

    pub fn remember(&mut self, node: NodeId, dist: Arc<Distribution>) {
        self.memo.insert(node, dist);
    }

    pub fn recall(&self, node: NodeId) -> Option<&Arc<Distribution>> {
        self.memo.get(&node)
    }

    pub fn memo_len(&self) -> usize {
        self.memo.len()
    }

    pub fn end_stage(&mut self) {
        self.memo.clear();
    }
}
