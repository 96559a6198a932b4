//! Draft stage: chain drafting, parallel frontier expansion with pruning, and
//! τ-redundant node merging.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{argmax_token, sample_from, warp, Distribution, SamplingParams};
use crate::error::{Error, Result};
use crate::graph::{flatten, Hypothesis, NodeId, NodeStatus, TokenGraph};
use crate::model::{ForwardWork, KVCacheState, LanguageModel};
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Target-only greedy or sampled decoding, no drafting.
    Vanilla,
    Ssd,
    Tsd,
    Gsd,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Vanilla, Mode::Ssd, Mode::Tsd, Mode::Gsd];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Ssd => "ssd",
            Mode::Tsd => "tsd",
            Mode::Gsd => "gsd",
        }
    }

    pub fn is_tree(self) -> bool {
        matches!(self, Mode::Tsd | Mode::Gsd)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" => Ok(Mode::Vanilla),
            "ssd" => Ok(Mode::Ssd),
            "tsd" => Ok(Mode::Tsd),
            "gsd" => Ok(Mode::Gsd),
            _ => Err(Error::InvalidConfig(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verification {
    Deterministic,
    Stochastic,
}

impl Verification {
    pub fn as_str(self) -> &'static str {
        match self {
            Verification::Deterministic => "deterministic",
            Verification::Stochastic => "stochastic",
        }
    }
}

impl FromStr for Verification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deterministic" | "greedy" => Ok(Verification::Deterministic),
            "stochastic" | "sampling" => Ok(Verification::Stochastic),
            _ => Err(Error::InvalidConfig(format!("unknown verification mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DraftConfig {
    pub mode: Mode,
    /// Maximum out-degree.
    pub k: usize,
    /// Maximum drafting steps per stage.
    pub gamma_max: usize,
    pub theta_prob: f64,
    pub theta_sib: f64,
    pub tau: usize,
    pub verification: Verification,
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DraftConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Gsd,
            k: 4,
            gamma_max: 10,
            theta_prob: 0.2,
            theta_sib: 0.3,
            tau: 2,
            verification: Verification::Deterministic,
            top_p: 0.7,
            temperature: 0.7,
            seed: 0,
        }
    }
}

impl DraftConfig {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn sampling(&self) -> SamplingParams {
        SamplingParams { top_p: self.top_p, temperature: self.temperature }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if self.gamma_max < 1 {
            return bad("gamma must be at least 1".into());
        }
        if self.tau < 1 {
            return bad("tau must be at least 1".into());
        }
        for (name, v) in [("theta_prob", self.theta_prob), ("theta_sib", self.theta_sib)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        self.sampling().validate()
    }

    /// Sets one field from its textual key and value. Returns `Ok(false)` for
    /// keys that are not draft settings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
        }
        match key {
            "mode" => self.mode = value.parse()?,
            "k" => self.k = num(key, value)?,
            "gamma" | "gamma_max" => self.gamma_max = num(key, value)?,
            "theta_prob" => self.theta_prob = num(key, value)?,
            "theta_sib" => self.theta_sib = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "verification" => self.verification = value.parse()?,
            "top_p" => self.top_p = num(key, value)?,
            "temperature" => self.temperature = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// A child proposal produced by [`select_children`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChildCandidate {
    pub token: TokenId,
    pub q_prob: f64,
    pub status: NodeStatus,
}

/// Top-`k` children of `dist` with both pruning rules applied. Tokens in
/// `exclude` and zero-probability tokens are never proposed; `m_q` is the
/// largest probability among the proposed children.
pub fn select_children(
    dist: &Distribution,
    k: usize,
    theta_prob: f64,
    theta_sib: f64,
    exclude: &[TokenId],
) -> Vec<ChildCandidate> {
    let top: Vec<(TokenId, f64)> = dist
        .top_k(k + exclude.len())
        .into_iter()
        .filter(|&(t, p)| p > 0.0 && !exclude.contains(&t))
        .take(k)
        .collect();
    let m_q = top.first().map_or(0.0, |&(_, p)| p);
    top.into_iter()
        .map(|(token, q_prob)| {
            let status = if q_prob < theta_prob {
                NodeStatus::LeafPrunedProb
            } else if q_prob < theta_sib * m_q {
                NodeStatus::LeafPrunedSibling
            } else {
                NodeStatus::Expandable
            };
            ChildCandidate { token, q_prob, status }
        })
        .collect()
}

/// Chain drafting. Appends the draft model's choice (argmax, or a sample from
/// the warped distribution in stochastic mode) up to `min(gamma_max, budget)`
/// times, stopping before the first token whose raw probability is below
/// `theta_prob` and before end-of-sequence.
///
/// In stochastic mode a drafted token is, given that drafting continued, a
/// sample from the warped distribution restricted to non-exiting tokens. That
/// restricted distribution is what gets memoized as the proposal, so that
/// verification against it stays exact.
#[allow(clippy::too_many_arguments)]
pub fn draft_ssd<M: LanguageModel + ?Sized, R: Rng + ?Sized>(
    draft: &M,
    context: &[TokenId],
    config: &DraftConfig,
    budget: usize,
    eos: Option<TokenId>,
    cache: &mut KVCacheState,
    rng: &mut R,
    work: &mut Vec<ForwardWork>,
) -> Result<Hypothesis> {
    let gamma = config.gamma_max.min(budget);
    let stochastic = config.verification == Verification::Stochastic;
    let mut seq = context.to_vec();
    let mut hyp = Hypothesis::default();
    for i in 0..gamma {
        let dist = draft.eval_next(&seq)?;
        work.push(ForwardWork::forward(1, seq.len()));
        let exits = |t: TokenId| Some(t) == eos || dist.prob(t) < config.theta_prob;
        let (token, proposal) = if stochastic {
            let warped = warp(&dist, config.sampling())?;
            let t = sample_from(&warped, rng)?;
            (t, (!exits(t)).then(|| restrict(&warped, |x| !exits(x))))
        } else {
            (argmax_token(&dist), None)
        };
        if exits(token) {
            break;
        }
        let q = dist.prob(token);
        if let Some(proposal) = proposal {
            cache.remember(NodeId(i as u32), Arc::new(proposal));
        }
        seq.push(token);
        hyp.tokens.push(token);
        hyp.q_probs.push(q);
    }
    Ok(hyp)
}

fn restrict(dist: &Distribution, keep: impl Fn(TokenId) -> bool) -> Distribution {
    let w = dist
        .probs()
        .iter()
        .enumerate()
        .map(|(t, &p)| if keep(t as TokenId) { p } else { 0.0 })
        .collect();
    Distribution::from_weights(w).expect("the sampled token is kept")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeOutcome {
    Merged(NodeId),
    Kept,
}

/// τ-redundancy check for a freshly created expandable node.
///
/// A node whose trailing τ-gram is already indexed is merged into the indexed
/// node, unless the indexed node can reach the new node through child and
/// merge edges; that covers the ancestor case and every longer cycle.
pub fn detect_and_merge(graph: &mut TokenGraph, node: NodeId, tau: usize) -> MergeOutcome {
    let Some(gram) = graph.trailing_ngram(node, tau) else {
        return MergeOutcome::Kept;
    };
    match graph.tau_index.get(&gram).copied() {
        Some(target) if target != node => {
            if graph.reaches(target, node) {
                return MergeOutcome::Kept;
            }
            let n = graph.node_mut(node);
            n.status = NodeStatus::LeafMerged;
            n.merge_target = Some(target);
            n.dist_source = target;
            MergeOutcome::Merged(target)
        }
        Some(_) => MergeOutcome::Kept,
        None => {
            graph.tau_index.insert(gram, node);
            MergeOutcome::Kept
        }
    }
}

/// Graph under construction in a tree or graph draft stage.
#[derive(Debug, Clone)]
pub struct DraftState {
    pub graph: TokenGraph,
    frontier: Vec<NodeId>,
}

impl DraftState {
    pub fn new(k: usize, depth_limit: usize, tau: usize) -> Self {
        let frontier = if depth_limit > 0 { vec![NodeId::ROOT] } else { Vec::new() };
        Self { graph: TokenGraph::new(k, depth_limit, tau), frontier }
    }

    pub fn frontier(&self) -> &[NodeId] {
        &self.frontier
    }
}

/// One round of parallel expansion: a single masked-batch forward over every
/// frontier node, children attached via [`select_children`], and in graph
/// mode each new expandable node passed through [`detect_and_merge`].
/// Returns the number of new nodes.
#[allow(clippy::too_many_arguments)]
pub fn expand_frontier<M: LanguageModel + ?Sized>(
    draft: &M,
    context: &[TokenId],
    state: &mut DraftState,
    config: &DraftConfig,
    eos: Option<TokenId>,
    cache: &mut KVCacheState,
    work: &mut Vec<ForwardWork>,
) -> Result<usize> {
    let frontier = std::mem::take(&mut state.frontier);
    if frontier.is_empty() {
        return Ok(0);
    }
    let graph = &mut state.graph;
    let dists = if frontier == [NodeId::ROOT] {
        work.push(ForwardWork::forward(1, context.len()));
        vec![draft.eval_next(context)?]
    } else {
        let batch = flatten(graph);
        let positions: Vec<usize> = frontier.iter().map(|n| n.index() - 1).collect();
        work.push(ForwardWork::forward(frontier.len(), context.len() + batch.len()));
        draft.eval_masked_positions(context, &batch, &positions)?
    };
    let exclude: Vec<TokenId> = eos.into_iter().collect();
    let merging = config.mode == Mode::Gsd;
    let mut created = 0;
    for (&parent, dist) in frontier.iter().zip(dists) {
        let depth = graph.node(parent).depth + 1;
        for c in select_children(&dist, config.k, config.theta_prob, config.theta_sib, &exclude) {
            let status = if c.status == NodeStatus::Expandable && depth >= graph.depth_limit() {
                NodeStatus::LeafDepth
            } else {
                c.status
            };
            let id = graph.add_child(parent, c.token, c.q_prob, status);
            created += 1;
            if status != NodeStatus::Expandable {
                continue;
            }
            if merging && detect_and_merge(graph, id, config.tau) != MergeOutcome::Kept {
                continue;
            }
            state.frontier.push(id);
        }
        cache.remember(parent, Arc::new(dist));
    }
    Ok(created)
}

/// Output of one draft stage.
#[derive(Debug, Clone)]
pub struct DraftStage {
    pub graph: TokenGraph,
    /// One entry per draft forward.
    pub work: Vec<ForwardWork>,
}

impl DraftStage {
    pub fn forwards(&self) -> usize {
        self.work.len()
    }
}

/// Runs one complete draft stage drafting at most `min(gamma_max, budget)`
/// levels. Tree modes memoize the draft distribution of every expanded node in
/// `cache`; a stochastic chain memoizes the proposal each token was drawn from.
pub fn run_draft_stage<M: LanguageModel + ?Sized, R: Rng + ?Sized>(
    draft: &M,
    context: &[TokenId],
    config: &DraftConfig,
    budget: usize,
    eos: Option<TokenId>,
    cache: &mut KVCacheState,
    rng: &mut R,
) -> Result<DraftStage> {
    let gamma = config.gamma_max.min(budget);
    let mut work = Vec::new();
    let graph = match config.mode {
        Mode::Vanilla => TokenGraph::new(1, 0, config.tau),
        Mode::Ssd => {
            let hyp = draft_ssd(draft, context, config, budget, eos, cache, rng, &mut work)?;
            chain_graph(&hyp, gamma, config.tau)
        }
        Mode::Tsd | Mode::Gsd => {
            let mut state = DraftState::new(config.k, gamma, config.tau);
            while !state.frontier.is_empty() {
                expand_frontier(draft, context, &mut state, config, eos, cache, &mut work)?;
            }
            state.graph
        }
    };
    Ok(DraftStage { graph, work })
}

/// Chain holding an SSD hypothesis. The tip is a depth leaf when the chain
/// used its full budget and a probability leaf when drafting exited early.
fn chain_graph(hyp: &Hypothesis, gamma: usize, tau: usize) -> TokenGraph {
    let mut g = TokenGraph::new(1, gamma, tau);
    let mut parent = NodeId::ROOT;
    for (i, (&t, &q)) in hyp.tokens.iter().zip(&hyp.q_probs).enumerate() {
        let status = if i + 1 < hyp.len() {
            NodeStatus::Expandable
        } else if hyp.len() == gamma {
            NodeStatus::LeafDepth
        } else {
            NodeStatus::LeafPrunedProb
        };
        parent = g.add_child(parent, t, q, status);
    }
    g
}
