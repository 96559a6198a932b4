//! Verification of a drafted tree against the target model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{argmax_token, sample_from, warp, Distribution, SamplingParams};
use crate::draft::Mode;
use crate::error::{Error, Result};
use crate::graph::{flatten, FlattenedBatch, NodeId, TokenGraph};
use crate::model::{ForwardWork, KVCacheState, LanguageModel};
use crate::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    /// Accepted node ids from the root (exclusive) down.
    pub accepted_path: Vec<NodeId>,
    pub accepted_tokens: Vec<TokenId>,
    pub bonus_token: TokenId,
    /// Children tested during the walk and whether each was accepted.
    pub labels: Vec<(NodeId, bool)>,
    /// One entry per visited node that had children: the 1-based rank of
    /// the accepted child, or `None` when all children were rejected.
    pub steps: Vec<Option<usize>>,
    /// True if any accepted node carries shared logits.
    pub merged_token_accepted: bool,
    /// Target work of the verification forward.
    pub work: ForwardWork,
}

/// Target distributions at tree nodes, evaluated on demand from the flattened
/// tree. Equivalent to one masked forward over the whole tree followed by
/// reading off the visited positions.
struct TargetView<'a, M: ?Sized> {
    model: &'a M,
    context: &'a [TokenId],
    batch: FlattenedBatch,
}

impl<M: LanguageModel + ?Sized> TargetView<'_, M> {
    fn at(&self, node: NodeId) -> Result<Distribution> {
        if node.is_root() {
            return self.model.eval_next(self.context);
        }
        let mut d = self.model.eval_masked_positions(self.context, &self.batch, &[node.index() - 1])?;
        Ok(d.pop().expect("one position"))
    }
}

fn prepare<'a, M: LanguageModel + ?Sized>(
    target: &'a M,
    context: &'a [TokenId],
    tree: &TokenGraph,
) -> Result<(TargetView<'a, M>, ForwardWork)> {
    if tree.has_merges() {
        return Err(Error::MalformedTree("verification needs an unmerged tree".into()));
    }
    tree.validate()?;
    let batch = flatten(tree);
    batch.mask.validate()?;
    target.check_context(context)?;
    let work = ForwardWork::forward(1 + batch.len(), context.len() + batch.len());
    Ok((TargetView { model: target, context, batch }, work))
}

fn finish(
    tree: &TokenGraph,
    path: Vec<NodeId>,
    bonus: TokenId,
    labels: Vec<(NodeId, bool)>,
    steps: Vec<Option<usize>>,
    work: ForwardWork,
) -> VerificationResult {
    VerificationResult {
        accepted_tokens: path.iter().map(|&n| tree.node(n).token).collect(),
        merged_token_accepted: path.iter().any(|&n| tree.node(n).shared_logits),
        accepted_path: path,
        bonus_token: bonus,
        labels,
        steps,
        work,
    }
}

/// Greedy walk: descend into the child matching the target's argmax until no
/// child matches; the argmax at the stopping point is the bonus token.
pub fn verify_deterministic<M: LanguageModel + ?Sized>(
    target: &M,
    context: &[TokenId],
    tree: &TokenGraph,
) -> Result<VerificationResult> {
    let (view, work) = prepare(target, context, tree)?;
    let (mut path, mut labels, mut steps) = (Vec::new(), Vec::new(), Vec::new());
    let mut cur = NodeId::ROOT;
    loop {
        let want = argmax_token(&view.at(cur)?);
        let children = &tree.node(cur).children;
        if children.is_empty() {
            return Ok(finish(tree, path, want, labels, steps, work));
        }
        let hit = children.iter().copied().find(|&c| tree.node(c).token == want);
        labels.extend(children.iter().map(|&c| (c, Some(c) == hit)));
        steps.push(hit.map(|c| tree.node(c).rank));
        match hit {
            Some(c) => {
                path.push(c);
                cur = c;
            }
            None => return Ok(finish(tree, path, want, labels, steps, work)),
        }
    }
}

/// `min(1, p / q)`.
pub fn accept_prob(p: f64, q: f64) -> Result<f64> {
    if q <= 0.0 || q.is_nan() {
        return Err(Error::ZeroDraftProbability);
    }
    if p.is_nan() || p < 0.0 {
        return Err(Error::InvalidDistribution(format!("target probability {p}")));
    }
    Ok((p / q).min(1.0))
}

/// `norm(max(0, p - q))`; `p` itself when nothing remains.
pub fn residual_distribution(p: &Distribution, q: &Distribution) -> Result<Distribution> {
    if p.len() != q.len() {
        return Err(Error::VocabularyMismatch(format!(
            "residual of {} against {} tokens",
            p.len(),
            q.len()
        )));
    }
    let r: Vec<f64> = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).max(0.0)).collect();
    let total: f64 = r.iter().sum();
    if total <= 1e-12 {
        return Ok(p.clone());
    }
    Ok(Distribution::from_normalized(r.into_iter().map(|x| x / total).collect()))
}

/// How the draft chose the children it proposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChildSelection {
    /// One child per node, drawn from the proposal memoized for the node.
    Sampled,
    /// The top-k children, chosen without randomness.
    TopK,
}

impl ChildSelection {
    pub fn for_mode(mode: Mode) -> Self {
        if mode.is_tree() {
            ChildSelection::TopK
        } else {
            ChildSelection::Sampled
        }
    }
}

/// Sampling walk. Children of the current node are tried in order against
/// `p'`, the warped target distribution, updating `p'` after each rejection.
///
/// - `Sampled`: a child is accepted with `min(1, p'(c) / q'(c))`, where `q'`
///   is the proposal memoized for the node; on rejection `p'` becomes its
///   residual against `q'`.
/// - `TopK`: a child's proposal is a point mass on its token, so it is
///   accepted with `p'(c)` and on rejection `c` is removed from `p'`.
///
/// If every child is rejected the bonus token is drawn from the final `p'`;
/// after a fully accepted path it is drawn from `p'` at the tip.
pub fn verify_stochastic<M: LanguageModel + ?Sized, R: Rng + ?Sized>(
    target: &M,
    context: &[TokenId],
    tree: &TokenGraph,
    cache: &KVCacheState,
    selection: ChildSelection,
    sampling: SamplingParams,
    rng: &mut R,
) -> Result<VerificationResult> {
    let (view, work) = prepare(target, context, tree)?;
    let (mut path, mut labels, mut steps) = (Vec::new(), Vec::new(), Vec::new());
    let mut cur = NodeId::ROOT;
    loop {
        let mut p = warp(&view.at(cur)?, sampling)?;
        let node = tree.node(cur);
        if node.children.is_empty() {
            let bonus = sample_from(&p, rng)?;
            return Ok(finish(tree, path, bonus, labels, steps, work));
        }
        let accepted = match selection {
            ChildSelection::Sampled => {
                let q = cache.recall(node.dist_source).ok_or_else(|| {
                    Error::MalformedTree(format!("no draft proposal for node {}", node.dist_source))
                })?;
                try_sampled(tree, &node.children, &mut p, q, &mut labels, rng)?
            }
            ChildSelection::TopK => try_top_k(tree, &node.children, &mut p, &mut labels, rng)?,
        };
        steps.push(accepted.map(|c| tree.node(c).rank));
        match accepted {
            Some(c) => {
                path.push(c);
                cur = c;
            }
            None => {
                let bonus = sample_from(&p, rng)?;
                return Ok(finish(tree, path, bonus, labels, steps, work));
            }
        }
    }
}

fn try_sampled<R: Rng + ?Sized>(
    tree: &TokenGraph,
    children: &[NodeId],
    p: &mut Distribution,
    q: &Distribution,
    labels: &mut Vec<(NodeId, bool)>,
    rng: &mut R,
) -> Result<Option<NodeId>> {
    for &c in children {
        let qc = q.prob(tree.node(c).token);
        if qc <= 0.0 {
            continue;
        }
        let a = accept_prob(p.prob(tree.node(c).token), qc)?;
        if rng.gen::<f64>() < a {
            labels.push((c, true));
            return Ok(Some(c));
        }
        labels.push((c, false));
        *p = residual_distribution(p, q)?;
    }
    Ok(None)
}

fn try_top_k<R: Rng + ?Sized>(
    tree: &TokenGraph,
    children: &[NodeId],
    p: &mut Distribution,
    labels: &mut Vec<(NodeId, bool)>,
    rng: &mut R,
) -> Result<Option<NodeId>> {
    let mut w = p.probs().to_vec();
    let mut rejected = false;
    for &c in children {
        let t = tree.node(c).token as usize;
        let rest: f64 = w.iter().sum();
        let pc = w[t];
        if pc > 0.0 && (pc >= rest * (1.0 - 1e-12) || rng.gen::<f64>() * rest < pc) {
            labels.push((c, true));
            return Ok(Some(c));
        }
        labels.push((c, false));
        w[t] = 0.0;
        rejected = true;
    }
    if rejected {
        *p = Distribution::from_weights(w)?;
    }
    Ok(None)
}

/// Appends the accepted tokens and the bonus token to `context`, advances
/// both cache prefixes and clears the per-stage memo. Returns the number of
/// tokens committed.
pub fn commit(
    result: &VerificationResult,
    cache: &mut KVCacheState,
    context: &mut Vec<TokenId>,
) -> usize {
    context.extend_from_slice(&result.accepted_tokens);
    context.push(result.bonus_token);
    cache.advance(context.len());
    cache.end_stage();
    result.accepted_tokens.len() + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::draft::{run_draft_stage, DraftConfig, Mode, Verification};
    use crate::graph::{unmerge, NodeStatus};
    use crate::model::ScriptedModel;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(p: &[f64]) -> Distribution {
        Distribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn acceptance_probability() {
        assert!((accept_prob(0.3, 0.6).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(accept_prob(0.4, 0.4).unwrap(), 1.0);
        assert_eq!(accept_prob(0.6, 0.3).unwrap(), 1.0);
        assert!(accept_prob(0.6, 0.0).is_err());
    }

    #[test]
    fn residual_examples() {
        let p = dist(&[0.5, 0.5, 0.0]);
        assert_eq!(residual_distribution(&p, &p).unwrap(), p);
        let r = residual_distribution(&p, &dist(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(r.probs(), &[0.0, 1.0, 0.0]);
    }

    fn weights() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, 5)
    }

    proptest! {
        #[test]
        fn residual_is_valid(a in weights(), b in weights()) {
            let p = Distribution::from_weights(a).unwrap();
            let q = Distribution::from_weights(b).unwrap();
            let r = residual_distribution(&p, &q).unwrap();
            prop_assert!(Distribution::new(r.probs().to_vec()).is_ok());
            for i in 0..5 {
                if q.probs()[i] >= p.probs()[i] {
                    prop_assert_eq!(r.probs()[i], 0.0);
                }
            }
        }

        #[test]
        fn accept_prob_in_unit_interval(p in 0.0f64..1.0, q in 1e-9f64..1.0) {
            let a = accept_prob(p, q).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn self_agreement_accepts_whole_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ScriptedModel::random(6, 2, 3.0, &mut rng);
        let cfg = DraftConfig { mode: Mode::Ssd, theta_prob: 0.0, ..Default::default() };
        let mut cache = KVCacheState::new();
        let s = run_draft_stage(&model, &[1], &cfg, usize::MAX, None, &mut cache, &mut rng).unwrap();
        assert_eq!(s.graph.drafted_token_count(), 10);
        let r = verify_deterministic(&model, &[1], &s.graph).unwrap();
        assert_eq!(r.accepted_tokens.len(), 10);
        assert_eq!(r.steps, vec![Some(1); 10]);
        let mut ctx = vec![1];
        r.accepted_tokens.iter().for_each(|&t| ctx.push(t));
        assert_eq!(r.bonus_token, argmax_token(&model.eval_next(&ctx).unwrap()));
    }

    #[test]
    fn immediate_rejection() {
        let target = ScriptedModel::new(Distribution::one_hot(4, 2));
        let mut tree = TokenGraph::new(2, 3, 1);
        tree.add_child(NodeId::ROOT, 0, 0.6, NodeStatus::Expandable);
        tree.add_child(NodeId::ROOT, 1, 0.4, NodeStatus::Expandable);
        let r = verify_deterministic(&target, &[3], &tree).unwrap();
        assert!(r.accepted_tokens.is_empty());
        assert_eq!(r.bonus_token, 2);
        assert_eq!(r.steps, vec![None]);

        let mut cache = KVCacheState::new();
        let mut ctx = vec![3];
        assert_eq!(commit(&r, &mut cache, &mut ctx), 1);
        assert_eq!(ctx, vec![3, 2]);
        assert_eq!(cache.target_prefix(), 2);
    }

    #[test]
    fn merged_trees_must_be_unmerged() {
        let mut g = TokenGraph::new(2, 4, 1);
        let y = g.add_child(NodeId::ROOT, 1, 0.6, NodeStatus::Expandable);
        let w = g.add_child(NodeId::ROOT, 2, 0.4, NodeStatus::Expandable);
        g.add_child(y, 3, 0.9, NodeStatus::LeafDepth);
        let x = g.add_child(w, 1, 0.9, NodeStatus::LeafMerged);
        g.node_mut(x).merge_target = Some(y);
        g.node_mut(x).dist_source = y;
        let target = ScriptedModel::new(Distribution::uniform(4))
            .with_entry(vec![0], Distribution::one_hot(4, 2))
            .unwrap()
            .with_entry(vec![0, 2], Distribution::one_hot(4, 1))
            .unwrap()
            .with_entry(vec![0, 2, 1], Distribution::one_hot(4, 3))
            .unwrap();
        assert!(verify_deterministic(&target, &[0], &g).is_err());
        let r = verify_deterministic(&target, &[0], &unmerge(&g)).unwrap();
        assert_eq!(r.accepted_tokens, vec![2, 1, 3]);
        assert!(r.merged_token_accepted);
    }

    #[test]
    fn stochastic_certain_chain_is_accepted() {
        let m = ScriptedModel::new(Distribution::one_hot(3, 1));
        let cfg = DraftConfig {
            mode: Mode::Tsd,
            verification: Verification::Stochastic,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cache = KVCacheState::new();
        let s = run_draft_stage(&m, &[0], &cfg, usize::MAX, None, &mut cache, &mut rng).unwrap();
        let r = verify_stochastic(&m, &[0], &s.graph, &cache, ChildSelection::TopK, cfg.sampling(), &mut rng).unwrap();
        assert_eq!(r.accepted_tokens, vec![1; 10]);
        assert_eq!(r.bonus_token, 1);
    }
}
