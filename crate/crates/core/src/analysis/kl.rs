use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::Distribution;
use crate::draft::{run_draft_stage, DraftConfig, Mode, Verification};
use crate::error::Result;
use crate::graph::TokenGraph;
use crate::model::{KVCacheState, LanguageModel};
use crate::TokenId;

/// Additive smoothing applied to both arguments of [`kl_divergence`].
pub const KL_EPSILON: f64 = 1e-12;

/// `KL(p || q)` in nats after mixing `KL_EPSILON` mass into every entry of
/// both distributions.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions over different vocabularies");
    let z = 1.0 + KL_EPSILON * p.len() as f64;
    let kl: f64 = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&a, &b)| {
            let (a, b) = ((a + KL_EPSILON) / z, (b + KL_EPSILON) / z);
            a * (a / b).ln()
        })
        .sum();
    kl.max(0.0)
}

/// For every merged node of `graph`: KL between the draft distribution after
/// its own path and the one after its merge target's path, which it inherits.
pub fn merge_kl_samples<M: LanguageModel + ?Sized>(
    draft: &M,
    context: &[TokenId],
    graph: &TokenGraph,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut seq = Vec::new();
    for n in graph.drafted() {
        let Some(target) = n.merge_target else { continue };
        let mut dist_at = |id| {
            seq.clear();
            seq.extend_from_slice(context);
            seq.extend(graph.path_tokens(id));
            draft.eval_next(&seq)
        };
        let own = dist_at(n.id)?;
        let shared = dist_at(target)?;
        out.push(kl_divergence(&own, &shared));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlRow {
    pub k: usize,
    pub tau: usize,
    pub merges: usize,
    /// `None` when no merge happened.
    pub mean_kl: Option<f64>,
    pub max_kl: Option<f64>,
}

impl KlRow {
    pub fn from_samples(k: usize, tau: usize, samples: &[f64]) -> Self {
        let n = samples.len();
        Self {
            k,
            tau,
            merges: n,
            mean_kl: (n > 0).then(|| samples.iter().sum::<f64>() / n as f64),
            max_kl: samples.iter().copied().reduce(f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KlTable {
    pub rows: Vec<KlRow>,
}

impl KlTable {
    pub fn get(&self, k: usize, tau: usize) -> Option<&KlRow> {
        self.rows.iter().find(|r| r.k == k && r.tau == tau)
    }

    /// Empty cells mark settings without merge events.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "no merge events".to_string(), |x| x.to_string());
        let mut s = String::from("k,tau,merges,mean_kl,max_kl\n");
        for r in &self.rows {
            s += &format!("{},{},{},{},{}\n", r.k, r.tau, r.merges, opt(r.mean_kl), opt(r.max_kl));
        }
        s
    }
}

/// One graph draft stage per prompt for every `(k, tau)` pair, collecting
/// the KL at each merge.
pub fn merge_kl_study<M: LanguageModel + ?Sized>(
    draft: &M,
    prompts: &[Vec<TokenId>],
    ks: &[usize],
    taus: &[usize],
    base: &DraftConfig,
    eos: Option<TokenId>,
) -> Result<KlTable> {
    let mut table = KlTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
    for &k in ks {
        for &tau in taus {
            let cfg = DraftConfig {
                mode: Mode::Gsd,
                k,
                tau,
                verification: Verification::Deterministic,
                ..*base
            };
            let mut samples = Vec::new();
            for p in prompts {
                let mut cache = KVCacheState::new();
                let stage = run_draft_stage(draft, p, &cfg, usize::MAX, eos, &mut cache, &mut rng)?;
                samples.extend(merge_kl_samples(draft, p, &stage.graph)?);
            }
            table.rows.push(KlRow::from_samples(k, tau, &samples));
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScriptedModel;
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        let p = Distribution::new(vec![1.0, 0.0]).unwrap();
        let q = Distribution::uniform(2);
        assert!((kl_divergence(&p, &q) - 2f64.ln()).abs() < 1e-9);
        assert_eq!(kl_divergence(&q, &q), 0.0);
    }

    proptest! {
        #[test]
        fn gibbs(a in prop::collection::vec(0.0f64..1.0, 6), b in prop::collection::vec(0.001f64..1.0, 6)) {
            prop_assume!(a.iter().sum::<f64>() > 0.0);
            let p = Distribution::from_weights(a).unwrap();
            let q = Distribution::from_weights(b).unwrap();
            let direct: f64 = p.probs().iter().zip(q.probs())
                .filter(|(x, _)| **x > 0.0)
                .map(|(x, y)| x * (x / y).ln())
                .sum();
            let kl = kl_divergence(&p, &q);
            prop_assert!(kl >= 0.0);
            prop_assert!((kl - direct.max(0.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_model_has_zero_kl() {
        let m = ScriptedModel::new(Distribution::new(vec![0.5, 0.3, 0.2]).unwrap());
        let cfg = DraftConfig { theta_prob: 0.0, theta_sib: 0.0, gamma_max: 5, ..Default::default() };
        let t = merge_kl_study(&m, &[vec![0], vec![1]], &[3], &[1], &cfg, None).unwrap();
        let row = t.get(3, 1).unwrap();
        assert!(row.merges > 0);
        assert_eq!(row.mean_kl, Some(0.0));
        let none = merge_kl_study(&m, &[vec![0]], &[3], &[10], &cfg, None).unwrap();
        assert_eq!(none.rows[0].mean_kl, None);
        assert!(none.to_csv().contains("no merge events"));
    }
}
