//! Language-model interface and the two reference models.

mod cache;
mod ngram;
mod scripted;

use serde::{Deserialize, Serialize};

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::graph::FlattenedBatch;
use crate::TokenId;

pub use cache::KVCacheState;
pub use ngram::{train_ngram, NGramModel, NGRAM_MAGIC, NGRAM_VERSION};
pub use scripted::{Lookup, ScriptedModel};

/// Abstract cost of one forward pass that processes `new` tokens on top of a
/// cached context, ending at total length `total`:
/// `per_forward + per_token * new + attention * new * total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub per_forward: f64,
    pub per_token: f64,
    pub attention: f64,
}

impl CostParams {
    pub const ZERO: CostParams = CostParams { per_forward: 0.0, per_token: 0.0, attention: 0.0 };

    /// Default declared cost of a target model.
    pub const TARGET: CostParams = CostParams { per_forward: 1.0, per_token: 0.01, attention: 1e-5 };

    /// Default declared cost of a draft model: a tenth of the target's.
    pub const DRAFT: CostParams = CostParams { per_forward: 0.1, per_token: 0.001, attention: 1e-6 };

    pub fn cost_of(&self, work: &ForwardWork) -> f64 {
        self.per_forward * work.forwards as f64
            + self.per_token * work.tokens as f64
            + self.attention * work.attention as f64
    }

    pub fn scaled(self, factor: f64) -> CostParams {
        CostParams {
            per_forward: self.per_forward * factor,
            per_token: self.per_token * factor,
            attention: self.attention * factor,
        }
    }
}

/// Accumulated forward-pass work, independent of any cost parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ForwardWork {
    pub forwards: u64,
    /// Tokens processed beyond the cached prefix.
    pub tokens: u64,
    /// Sum over forwards of `new tokens * total length`.
    pub attention: u64,
}

impl ForwardWork {
    /// One forward processing `new` tokens, ending at total length `total`.
    pub fn forward(new: usize, total: usize) -> Self {
        Self { forwards: 1, tokens: new as u64, attention: (new * total) as u64 }
    }

    /// Cache maintenance that touches `tokens` tokens without a forward pass.
    pub fn bookkeeping(tokens: usize) -> Self {
        Self { forwards: 0, tokens: tokens as u64, attention: 0 }
    }
}

impl std::ops::AddAssign for ForwardWork {
    fn add_assign(&mut self, o: Self) {
        self.forwards += o.forwards;
        self.tokens += o.tokens;
        self.attention += o.attention;
    }
}

impl std::iter::Sum for ForwardWork {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        let mut acc = ForwardWork::default();
        for w in iter {
            acc += w;
        }
        acc
    }
}

pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Longest context the model accepts.
    fn max_context(&self) -> usize {
        usize::MAX
    }

    fn cost(&self) -> CostParams;

    /// Next-token distribution for an already validated context.
    fn predict(&self, context: &[TokenId]) -> Distribution;

    fn check_context(&self, context: &[TokenId]) -> Result<()> {
        if context.len() > self.max_context() {
            return Err(Error::InputTooLong { len: context.len(), max: self.max_context() });
        }
        let vocab_size = self.vocab_size();
        if let Some(&token) = context.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::TokenOutOfRange { token, vocab_size });
        }
        Ok(())
    }

    fn eval_next(&self, context: &[TokenId]) -> Result<Distribution> {
        self.check_context(context)?;
        Ok(self.predict(context))
    }

    /// One distribution per batch position; position `i` sees the prompt
    /// followed by its ancestor path.
    fn eval_masked_batch(
        &self,
        prompt: &[TokenId],
        batch: &FlattenedBatch,
    ) -> Result<Vec<Distribution>> {
        let all: Vec<usize> = (0..batch.len()).collect();
        self.eval_masked_positions(prompt, batch, &all)
    }

    /// Same as [`LanguageModel::eval_masked_batch`] restricted to `positions`.
    /// Results are identical to evaluating the whole batch and selecting.
    fn eval_masked_positions(
        &self,
        prompt: &[TokenId],
        batch: &FlattenedBatch,
        positions: &[usize],
    ) -> Result<Vec<Distribution>> {
        if batch.mask.len() != batch.len() {
            return Err(Error::InvalidMask(format!(
                "{} mask rows for {} tokens",
                batch.mask.len(),
                batch.len()
            )));
        }
        batch.mask.validate()?;
        self.check_context(prompt)?;
        let vocab_size = self.vocab_size();
        if let Some(&token) = batch.tokens.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::TokenOutOfRange { token, vocab_size });
        }
        let mut ctx = prompt.to_vec();
        positions
            .iter()
            .map(|&i| {
                if i >= batch.len() {
                    return Err(Error::InvalidMask(format!("position {i} outside batch")));
                }
                ctx.truncate(prompt.len());
                ctx.extend(batch.mask.row(i).iter().map(|&j| batch.tokens[j as usize]));
                if ctx.len() > self.max_context() {
                    return Err(Error::InputTooLong { len: ctx.len(), max: self.max_context() });
                }
                Ok(self.predict(&ctx))
            })
            .collect()
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn max_context(&self) -> usize {
        (**self).max_context()
    }
    fn cost(&self) -> CostParams {
        (**self).cost()
    }
    fn predict(&self, context: &[TokenId]) -> Distribution {
        (**self).predict(context)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for Box<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn max_context(&self) -> usize {
        (**self).max_context()
    }
    fn cost(&self) -> CostParams {
        (**self).cost()
    }
    fn predict(&self, context: &[TokenId]) -> Distribution {
        (**self).predict(context)
    }
}
