use std::collections::HashMap;

use rand::Rng;

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::model::{CostParams, LanguageModel};
use crate::TokenId;

/// How a context is matched against the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Lookup {
    /// The whole context must be a key.
    #[default]
    Exact,
    /// The longest context suffix present in the table wins.
    LongestSuffix,
}

/// Table-driven model: contexts map to fixed distributions, anything else
/// returns the default.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    vocab_size: usize,
    table: HashMap<Vec<TokenId>, Distribution>,
    default: Distribution,
    lookup: Lookup,
    max_key_len: usize,
    max_context: usize,
    cost: CostParams,
}

impl ScriptedModel {
    pub fn new(default: Distribution) -> Self {
        Self {
            vocab_size: default.len(),
            table: HashMap::new(),
            default,
            lookup: Lookup::Exact,
            max_key_len: 0,
            max_context: usize::MAX,
            cost: CostParams::TARGET,
        }
    }

    pub fn with_lookup(mut self, lookup: Lookup) -> Self {
        self.lookup = lookup;
        self
    }

    pub fn with_cost(mut self, cost: CostParams) -> Self {
        self.cost = cost;
        self
    }

    pub fn with_max_context(mut self, max: usize) -> Self {
        self.max_context = max;
        self
    }

    pub fn insert(&mut self, context: Vec<TokenId>, dist: Distribution) -> Result<()> {
        if dist.len() != self.vocab_size {
            return Err(Error::VocabularyMismatch(format!(
                "distribution over {} tokens, model has {}",
                dist.len(),
                self.vocab_size
            )));
        }
        if let Some(&token) = context.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::TokenOutOfRange { token, vocab_size: self.vocab_size });
        }
        self.max_key_len = self.max_key_len.max(context.len());
        self.table.insert(context, dist);
        Ok(())
    }

    pub fn with_entry(mut self, context: Vec<TokenId>, dist: Distribution) -> Result<Self> {
        self.insert(context, dist)?;
        Ok(self)
    }

    pub fn default_distribution(&self) -> &Distribution {
        &self.default
    }

    /// A model with a random distribution for every context of length up to
    /// `key_len`, matched by longest suffix. `sharpness` above 1 makes the
    /// distributions peakier.
    pub fn random<R: Rng + ?Sized>(
        vocab_size: usize,
        key_len: usize,
        sharpness: f64,
        rng: &mut R,
    ) -> Self {
        let mut model = ScriptedModel::new(random_distribution(vocab_size, sharpness, rng))
            .with_lookup(Lookup::LongestSuffix);
        let mut keys: Vec<Vec<TokenId>> = vec![Vec::new()];
        for _ in 0..key_len {
            keys = keys
                .iter()
                .flat_map(|k| {
                    (0..vocab_size as TokenId).map(move |t| {
                        let mut next = k.clone();
                        next.push(t);
                        next
                    })
                })
                .collect();
            for k in &keys {
                let d = random_distribution(vocab_size, sharpness, rng);
                model.insert(k.clone(), d).expect("sizes match");
            }
        }
        model
    }

    /// A copy whose distributions are mixed with fresh random noise:
    /// `(1 - noise) * p + noise * r`.
    pub fn perturbed<R: Rng + ?Sized>(&self, noise: f64, sharpness: f64, rng: &mut R) -> Self {
        let mix = |d: &Distribution, rng: &mut R| {
            let r = random_distribution(self.vocab_size, sharpness, rng);
            let w = d
                .probs()
                .iter()
                .zip(r.probs())
                .map(|(a, b)| (1.0 - noise) * a + noise * b)
                .collect();
            Distribution::from_weights(w).expect("convex mix of distributions")
        };
        let mut keys: Vec<&Vec<TokenId>> = self.table.keys().collect();
        keys.sort();
        let mut out = ScriptedModel::new(mix(&self.default, rng)).with_lookup(self.lookup);
        out.cost = self.cost;
        out.max_context = self.max_context;
        for k in keys {
            let d = mix(&self.table[k], rng);
            out.insert(k.clone(), d).expect("sizes match");
        }
        out
    }
}

fn random_distribution<R: Rng + ?Sized>(n: usize, sharpness: f64, rng: &mut R) -> Distribution {
    let w: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            (-u.ln()).powf(sharpness)
        })
        .collect();
    Distribution::from_weights(w).expect("positive weights")
}

impl LanguageModel for ScriptedModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_context(&self) -> usize {
        self.max_context
    }

    fn cost(&self) -> CostParams {
        self.cost
    }

    fn predict(&self, context: &[TokenId]) -> Distribution {
        let found = match self.lookup {
            Lookup::Exact => self.table.get(context),
            Lookup::LongestSuffix => {
                let longest = self.max_key_len.min(context.len());
                (0..=longest).rev().find_map(|l| self.table.get(&context[context.len() - l..]))
            }
        };
        found.unwrap_or(&self.default).clone()
    }
}
