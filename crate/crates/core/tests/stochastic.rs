use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use specgraph::{DraftConfig, LanguageModel, Mode, ScriptedModel, SessionConfig, TokenId, Verification};

/// Temperature, then the smallest ranked prefix reaching `top_p`.
fn warp(p: &[f64], top_p: f64, temperature: f64) -> Vec<f64> {
    let w: Vec<f64> = p.iter().map(|x| x.powf(1.0 / temperature)).collect();
    let z: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|x| x / z).collect();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let mut keep = vec![false; w.len()];
    let mut mass = 0.0;
    for i in order {
        keep[i] = true;
        mass += w[i];
        if mass >= top_p - 1e-12 {
            break;
        }
    }
    let z: f64 = (0..w.len()).filter(|&i| keep[i]).map(|i| w[i]).sum();
    (0..w.len()).map(|i| if keep[i] { w[i] / z } else { 0.0 }).collect()
}

/// Total-variation distance between the empirical law of the first two output
/// tokens and the exact warped target law.
fn joint_tv(draft: &ScriptedModel, target: &ScriptedModel, cfg: &SessionConfig, eos: Option<TokenId>, runs: u64) -> f64 {
    let v = target.vocab_size();
    let (tp, temp) = (cfg.draft.top_p, cfg.draft.temperature);
    let prompt = [1];
    let first = warp(target.eval_next(&prompt).unwrap().probs(), tp, temp);
    let mut exact = vec![0.0; v * (v + 1)];
    for a in 0..v {
        if Some(a as TokenId) == eos {
            // the session stops after an end-of-sequence token
            exact[a * (v + 1) + v] = first[a];
            continue;
        }
        let second = warp(target.eval_next(&[1, a as TokenId]).unwrap().probs(), tp, temp);
        for b in 0..v {
            exact[a * (v + 1) + b] = first[a] * second[b];
        }
    }
    let mut counts = vec![0u64; exact.len()];
    for i in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        rng.set_stream(i);
        let s = specgraph::run_session(draft, target, &prompt, cfg, eos, &mut rng).unwrap();
        let b = s.output.get(1).map_or(v, |&t| t as usize);
        counts[s.output[0] as usize * (v + 1) + b] += 1;
    }
    exact
        .iter()
        .zip(&counts)
        .map(|(e, &c)| (c as f64 / runs as f64 - e).abs())
        .sum::<f64>()
        / 2.0
}

fn pair(seed: u64) -> (ScriptedModel, ScriptedModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = ScriptedModel::random(3, 2, 1.5, &mut rng);
    let draft = target.perturbed(0.5, 2.0, &mut rng);
    (draft, target)
}

fn config(mode: Mode, k: usize, top_p: f64, temperature: f64) -> SessionConfig {
    SessionConfig {
        draft: DraftConfig {
            mode,
            k,
            top_p,
            temperature,
            gamma_max: 3,
            theta_prob: 0.05,
            theta_sib: 0.1,
            tau: 1,
            verification: Verification::Stochastic,
            ..Default::default()
        },
        max_output: 3,
        ..Default::default()
    }
}

#[test]
fn every_mode_samples_the_target_law() {
    let (draft, target) = pair(31);
    for mode in Mode::ALL {
        for (top_p, t) in [(1.0, 1.0), (0.7, 0.7)] {
            let tv = joint_tv(&draft, &target, &config(mode, 3, top_p, t), None, 40_000);
            assert!(tv <= 0.012, "{mode} top_p={top_p} t={t}: tv {tv}");
        }
    }
}

#[test]
fn identical_models_still_sample() {
    // with draft == target the top child is certain under q; the output law
    // must still be the target's, not its argmax
    let (_, target) = pair(32);
    for mode in [Mode::Ssd, Mode::Tsd, Mode::Gsd] {
        let tv = joint_tv(&target, &target, &config(mode, 2, 1.0, 1.0), None, 40_000);
        assert!(tv <= 0.012, "{mode}: tv {tv}");
    }
}

#[test]
fn end_of_sequence_is_never_drafted_but_still_sampled() {
    let (draft, target) = pair(33);
    for mode in [Mode::Ssd, Mode::Gsd] {
        let tv = joint_tv(&draft, &target, &config(mode, 2, 1.0, 1.0), Some(2), 40_000);
        assert!(tv <= 0.012, "{mode}: tv {tv}");
    }
}

#[test]
fn stochastic_runs_are_seed_reproducible() {
    let (draft, target) = pair(34);
    let cfg = config(Mode::Gsd, 3, 0.7, 0.7);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        specgraph::run_session(&draft, &target, &[1], &SessionConfig { max_output: 30, ..cfg }, None, &mut rng)
            .unwrap()
            .output
    };
    assert_eq!(run(5), run(5));
    assert_ne!((0..8).map(run).collect::<Vec<_>>(), vec![run(5); 8]);
}
