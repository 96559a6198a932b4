//! Next-token probability vectors and the samplers that draw from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

/// Maximum allowed deviation of a distribution's total mass from 1.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// A probability vector over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates `probs` and wraps it.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidDistribution(format!("entry {i} is {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("mass {sum} != 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "weights cannot be normalized (sum {sum})"
            )));
        }
        Ok(Self { probs: weights.into_iter().map(|w| w / sum).collect() })
    }

    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        debug_assert!(Self::new(probs.clone()).is_ok());
        Self { probs }
    }

    pub fn one_hot(vocab_size: usize, token: TokenId) -> Self {
        let mut probs = vec![0.0; vocab_size];
        probs[token as usize] = 1.0;
        Self { probs }
    }

    pub fn uniform(vocab_size: usize) -> Self {
        Self { probs: vec![1.0 / vocab_size as f64; vocab_size] }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs.get(token as usize).copied().unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// Token ids ordered by descending probability, ties toward the lower id.
    pub fn ranked(&self) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = (0..self.probs.len() as TokenId).collect();
        ids.sort_by(|&a, &b| {
            self.probs[b as usize]
                .total_cmp(&self.probs[a as usize])
                .then(a.cmp(&b))
        });
        ids
    }

    /// The `k` most probable tokens with their probabilities, in rank order.
    pub fn top_k(&self, k: usize) -> Vec<(TokenId, f64)> {
        let mut best: Vec<(TokenId, f64)> = Vec::with_capacity(k + 1);
        if k == 0 {
            return best;
        }
        for (i, &p) in self.probs.iter().enumerate() {
            if best.len() == k && p <= best[k - 1].1 {
                continue;
            }
            let pos = best.partition_point(|&(_, q)| q >= p);
            best.insert(pos, (i as TokenId, p));
            best.truncate(k);
        }
        best
    }
}

/// Temperature and nucleus settings applied before sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub top_p: f64,
    pub temperature: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { top_p: 0.7, temperature: 0.7 }
    }
}

impl SamplingParams {
    pub const RAW: SamplingParams = SamplingParams { top_p: 1.0, temperature: 1.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidSampling(format!("top_p {} not in (0, 1]", self.top_p)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidSampling(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Applies temperature, then keeps the smallest probability-ranked prefix whose
/// mass reaches `top_p`, and renormalizes.
pub fn warp(dist: &Distribution, params: SamplingParams) -> Result<Distribution> {
    params.validate()?;
    let probs = dist.probs();
    let mut scaled: Vec<f64> = if params.temperature == 1.0 {
        probs.to_vec()
    } else {
        let max_log = probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p.ln())
            .fold(f64::NEG_INFINITY, f64::max);
        probs
            .iter()
            .map(|&p| if p > 0.0 { ((p.ln() - max_log) / params.temperature).exp() } else { 0.0 })
            .collect()
    };
    let total: f64 = scaled.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegenerateDistribution);
    }
    scaled.iter_mut().for_each(|w| *w /= total);

    if params.top_p < 1.0 {
        let tmp = Distribution { probs: scaled };
        let mut keep = vec![false; tmp.len()];
        let mut mass = 0.0;
        for id in tmp.ranked() {
            let p = tmp.probs[id as usize];
            if p <= 0.0 {
                break;
            }
            keep[id as usize] = true;
            mass += p;
            if mass >= params.top_p - 1e-12 {
                break;
            }
        }
        scaled = tmp
            .probs
            .into_iter()
            .zip(keep)
            .map(|(p, k)| if k { p } else { 0.0 })
            .collect();
    }
    Distribution::from_weights(scaled).map_err(|_| Error::DegenerateDistribution)
}

/// Draws one token from `dist` exactly as given.
pub fn sample_from<R: Rng + ?Sized>(dist: &Distribution, rng: &mut R) -> Result<TokenId> {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_nonzero = None;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_nonzero = Some(i as TokenId);
            if u < acc {
                return Ok(i as TokenId);
            }
        }
    }
    // rounding can leave the cumulative mass a hair below u
    last_nonzero.ok_or(Error::DegenerateDistribution)
}

/// Samples from the temperature-scaled, nucleus-truncated distribution.
pub fn sample_token<R: Rng + ?Sized>(
    dist: &Distribution,
    top_p: f64,
    temperature: f64,
    rng: &mut R,
) -> Result<TokenId> {
    let warped = warp(dist, SamplingParams { top_p, temperature })?;
    sample_from(&warped, rng)
}

/// Index of the largest probability; ties go to the lowest id.
pub fn argmax_token(dist: &Distribution) -> TokenId {
    let mut best = 0usize;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > dist.probs()[best] {
            best = i;
        }
    }
    best as TokenId
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn d(p: &[f64]) -> Distribution {
        Distribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(Distribution::new(vec![0.5, 0.4]).is_err());
        assert!(Distribution::new(vec![1.5, -0.5]).is_err());
        assert!(Distribution::new(vec![]).is_err());
        assert!(Distribution::new(vec![f64::NAN, 1.0]).is_err());
        assert!(Distribution::new(vec![0.5, 0.5 + 5e-10]).is_ok());
    }

    #[test]
    fn argmax_cases() {
        assert_eq!(argmax_token(&d(&[0.1, 0.7, 0.2])), 1);
        assert_eq!(argmax_token(&d(&[0.5, 0.5])), 0);
        assert_eq!(argmax_token(&Distribution::one_hot(6, 4)), 4);
    }

    #[test]
    fn nucleus_truncation_by_hand() {
        // cumulative 0.6 < 0.7 <= 0.9, so the nucleus is {0, 1}
        let w = warp(&d(&[0.6, 0.3, 0.1]), SamplingParams { top_p: 0.7, temperature: 1.0 }).unwrap();
        assert!((w.prob(0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((w.prob(1) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(w.prob(2), 0.0);
    }

    #[test]
    fn temperature_sharpens() {
        // p^(1/T) with T = 0.5 squares the probabilities before renormalizing
        let w = warp(&d(&[0.75, 0.25]), SamplingParams { top_p: 1.0, temperature: 0.5 }).unwrap();
        assert!((w.prob(0) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn one_hot_always_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = Distribution::one_hot(5, 2);
        for _ in 0..200 {
            assert_eq!(sample_token(&dist, 0.7, 0.7, &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn raw_sampling_matches_frequencies() {
        let dist = d(&[0.5, 0.2, 0.2, 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_token(&dist, 1.0, 1.0, &mut rng).unwrap() as usize] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let f = *c as f64 / n as f64;
            assert!((f - dist.prob(i as TokenId)).abs() < 0.01, "token {i}: {f}");
        }
    }

    #[test]
    fn invalid_params() {
        let dist = d(&[0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_token(&dist, 0.0, 1.0, &mut rng).is_err());
        assert!(sample_token(&dist, 1.2, 1.0, &mut rng).is_err());
        assert!(sample_token(&dist, 0.5, 0.0, &mut rng).is_err());
    }

    #[test]
    fn top_k_rank_order() {
        let dist = d(&[0.1, 0.3, 0.3, 0.2, 0.1]);
        assert_eq!(dist.top_k(3), vec![(1, 0.3), (2, 0.3), (3, 0.2)]);
        assert_eq!(dist.ranked()[..3], [1, 2, 3]);
    }

    proptest! {
        #[test]
        fn seeded_sampling_is_reproducible(
            w in proptest::collection::vec(0.01f64..1.0, 2..10),
            seed in any::<u64>(),
        ) {
            let dist = Distribution::from_weights(w).unwrap();
            let a: Vec<_> = {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..20).map(|_| sample_token(&dist, 0.7, 0.7, &mut rng).unwrap()).collect()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<_> = (0..20).map(|_| sample_token(&dist, 0.7, 0.7, &mut rng).unwrap()).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn top_k_agrees_with_full_ranking(
            w in proptest::collection::vec(0.0f64..1.0, 1..30),
            k in 1usize..8,
        ) {
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let dist = Distribution::from_weights(w).unwrap();
            let expect: Vec<TokenId> = dist.ranked().into_iter().take(k).collect();
            let got: Vec<TokenId> = dist.top_k(k).into_iter().map(|(t, _)| t).collect();
            prop_assert_eq!(got, expect);
        }

        #[test]
        fn warp_yields_valid_distribution(
            w in proptest::collection::vec(0.0f64..1.0, 1..20),
            top_p in 0.05f64..=1.0,
            temp in 0.1f64..3.0,
        ) {
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let dist = Distribution::from_weights(w).unwrap();
            let out = warp(&dist, SamplingParams { top_p, temperature: temp }).unwrap();
            prop_assert!(Distribution::new(out.probs().to_vec()).is_ok());
        }
    }
}
