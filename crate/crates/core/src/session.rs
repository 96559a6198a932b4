//! The draft-verify loop for one prompt.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::merge_kl_samples;
use crate::draft::{run_draft_stage, DraftConfig, DraftStage, Mode, Verification};
use crate::error::{Error, Result};
use crate::graph::{graph_lines, unmerge, NodeId, TokenGraph};
use crate::model::{ForwardWork, KVCacheState, LanguageModel};
use crate::verify::{commit, verify_deterministic, verify_stochastic, ChildSelection};
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub draft: DraftConfig,
    pub max_output: usize,
    /// Longer prompts keep their first `max_input` tokens.
    pub max_input: usize,
    /// Store each stage's draft graph in its record.
    pub record_graphs: bool,
    /// Store the KL divergence at every merge in its record.
    pub record_kl: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            draft: DraftConfig::default(),
            max_output: 512,
            max_input: 512,
            record_graphs: false,
            record_kl: false,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_output == 0 || self.max_input == 0 {
            return Err(Error::InvalidConfig("length limits must be positive".into()));
        }
        self.draft.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    /// Most tokens this stage was allowed to draft in depth.
    pub budget: usize,
    /// Nodes generated by the draft model.
    pub drafted: usize,
    pub merged: usize,
    /// Non-root nodes of the verified tree.
    pub tree_nodes: usize,
    pub draft_work: ForwardWork,
    pub verify_work: ForwardWork,
    pub others_work: ForwardWork,
    pub accepted_path: Vec<NodeId>,
    pub accepted_tokens: Vec<TokenId>,
    pub bonus: TokenId,
    pub steps: Vec<Option<usize>>,
    pub merged_token_accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_kl: Option<Vec<f64>>,
}

impl StageRecord {
    pub fn accepted(&self) -> usize {
        self.accepted_tokens.len()
    }

    pub fn committed(&self) -> usize {
        self.accepted_tokens.len() + 1
    }
}

/// Wall-clock seconds per phase of one stage. The phases are measured
/// back to back, so they add up to the stage time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: usize,
    pub draft: f64,
    pub verify: f64,
    pub others: f64,
}

impl StageTiming {
    pub fn total(&self) -> f64 {
        self.draft + self.verify + self.others
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EndOfSequence,
    MaxOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutput {
    /// Prompt after truncation.
    pub prompt: Vec<TokenId>,
    pub prompt_len_original: usize,
    pub output: Vec<TokenId>,
    pub stages: Vec<StageRecord>,
    pub timings: Vec<StageTiming>,
    pub stop: StopReason,
}

/// Decodes one prompt. Vanilla mode runs the target alone through the same
/// verification path with an empty draft.
pub fn run_session<D, T, R>(
    draft: &D,
    target: &T,
    prompt: &[TokenId],
    config: &SessionConfig,
    eos: Option<TokenId>,
    rng: &mut R,
) -> Result<SessionOutput>
where
    D: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
    R: Rng + ?Sized,
{
    config.validate()?;
    if draft.vocab_size() != target.vocab_size() {
        return Err(Error::VocabularyMismatch(format!(
            "draft has {} tokens, target {}",
            draft.vocab_size(),
            target.vocab_size()
        )));
    }
    let mut context: Vec<TokenId> = prompt.iter().copied().take(config.max_input).collect();
    if context.is_empty() {
        return Err(Error::InvalidConfig("empty prompt".into()));
    }
    let dc = &config.draft;
    let mut cache = KVCacheState::new();
    cache.advance(context.len());
    let mut out = SessionOutput {
        prompt: context.clone(),
        prompt_len_original: prompt.len(),
        output: Vec::new(),
        stages: Vec::new(),
        timings: Vec::new(),
        stop: StopReason::MaxOutput,
    };
    while out.output.len() < config.max_output {
        let budget = config.max_output - out.output.len() - 1;
        let t0 = Instant::now();
        let stage = if dc.mode == Mode::Vanilla {
            DraftStage { graph: TokenGraph::new(1, 0, dc.tau), work: Vec::new() }
        } else {
            run_draft_stage(draft, &context, dc, budget, eos, &mut cache, rng)?
        };
        let t1 = Instant::now();
        let tree = if stage.graph.has_merges() { unmerge(&stage.graph) } else { stage.graph.clone() };
        let result = match dc.verification {
            Verification::Deterministic => verify_deterministic(target, &context, &tree)?,
            Verification::Stochastic => {
                verify_stochastic(
                    target,
                    &context,
                    &tree,
                    &cache,
                    ChildSelection::for_mode(dc.mode),
                    dc.sampling(),
                    rng,
                )?
            }
        };
        let t2 = Instant::now();
        let stage_context = context.len();
        let committed = commit(&result, &mut cache, &mut context);
        let others_work = if dc.mode == Mode::Vanilla {
            ForwardWork::default()
        } else {
            ForwardWork::bookkeeping(committed)
        };
        let t3 = Instant::now();

        let merge_kl = if config.record_kl && stage.graph.has_merges() {
            Some(merge_kl_samples(draft, &context[..stage_context], &stage.graph)?)
        } else if config.record_kl {
            Some(Vec::new())
        } else {
            None
        };
        let index = out.stages.len();
        out.output.extend_from_slice(&context[stage_context..]);
        out.timings.push(StageTiming {
            stage: index,
            draft: (t1 - t0).as_secs_f64(),
            verify: (t2 - t1).as_secs_f64(),
            others: (t3 - t2).as_secs_f64(),
        });
        out.stages.push(StageRecord {
            stage: index,
            budget: dc.gamma_max.min(budget),
            drafted: stage.graph.drafted_token_count(),
            merged: stage.graph.merged_count(),
            tree_nodes: tree.len() - 1,
            draft_work: stage.work.iter().copied().sum(),
            verify_work: result.work,
            others_work,
            accepted_path: result.accepted_path,
            accepted_tokens: result.accepted_tokens,
            bonus: result.bonus_token,
            steps: result.steps,
            merged_token_accepted: result.merged_token_accepted,
            graph: config.record_graphs.then(|| graph_lines(&stage.graph)),
            merge_kl,
        });
        if Some(result.bonus_token) == eos {
            out.stop = StopReason::EndOfSequence;
            break;
        }
    }
    Ok(out)
}
