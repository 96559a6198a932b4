use serde::{Deserialize, Serialize};

use crate::draft::Mode;
use crate::error::{Error, Result};
use crate::model::{CostParams, ForwardWork};
use crate::trace::{TimingRecord, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseCosts {
    pub draft: f64,
    pub verify: f64,
    pub others: f64,
}

impl PhaseCosts {
    pub fn total(&self) -> f64 {
        self.draft + self.verify + self.others
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub name: String,
    pub mode: Mode,
    pub prompts: usize,
    pub total_output_tokens: u64,
    pub accepted_from_draft: u64,
    pub drafted_token_total: u64,
    pub merged_node_total: u64,
    pub stages: u64,
    pub stages_with_merged_accept: u64,
    /// `accepted_from_draft / total_output_tokens`.
    pub acceptance_rate: f64,
    /// `stages_with_merged_accept / stages`.
    pub graph_success: f64,
    pub mean_accepted_per_stage: f64,
    pub mean_drafted_per_stage: f64,
    pub draft_work: ForwardWork,
    pub verify_work: ForwardWork,
    pub others_work: ForwardWork,
    /// Work of target-only greedy decoding of the same outputs.
    pub baseline_work: ForwardWork,
    pub draft_cost: CostParams,
    pub target_cost: CostParams,
    pub modeled: PhaseCosts,
    pub modeled_baseline: f64,
    pub modeled_speedup: f64,
    /// Measured seconds per phase, when timings were supplied.
    #[serde(default)]
    pub wall: Option<PhaseCosts>,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Aggregates a complete trace. Fails if a prompt's recorded output does not
/// match its stages.
pub fn compute_metrics(trace: &Trace) -> Result<RunMetrics> {
    let h = &trace.header;
    let mut m = RunMetrics {
        name: h.name.clone(),
        mode: h.session.draft.mode,
        prompts: trace.prompts.len(),
        total_output_tokens: 0,
        accepted_from_draft: 0,
        drafted_token_total: 0,
        merged_node_total: 0,
        stages: 0,
        stages_with_merged_accept: 0,
        acceptance_rate: 0.0,
        graph_success: 0.0,
        mean_accepted_per_stage: 0.0,
        mean_drafted_per_stage: 0.0,
        draft_work: ForwardWork::default(),
        verify_work: ForwardWork::default(),
        others_work: ForwardWork::default(),
        baseline_work: ForwardWork::default(),
        draft_cost: h.draft_cost,
        target_cost: h.target_cost,
        modeled: PhaseCosts::default(),
        modeled_baseline: 0.0,
        modeled_speedup: 0.0,
        wall: None,
    };
    for p in &trace.prompts {
        let committed: usize = p.stages.iter().map(|s| s.committed()).sum();
        if committed != p.output.len() {
            return Err(Error::Trace(format!(
                "prompt {}: stages commit {committed} tokens, output has {}",
                p.index,
                p.output.len()
            )));
        }
        for s in &p.stages {
            m.stages += 1;
            m.accepted_from_draft += s.accepted() as u64;
            m.drafted_token_total += s.drafted as u64;
            m.merged_node_total += s.merged as u64;
            m.stages_with_merged_accept += s.merged_token_accepted as u64;
            m.draft_work += s.draft_work;
            m.verify_work += s.verify_work;
            m.others_work += s.others_work;
        }
        m.total_output_tokens += p.output.len() as u64;
        for i in 0..p.output.len() {
            m.baseline_work += ForwardWork::forward(1, p.prompt.len() + i);
        }
    }
    m.acceptance_rate = ratio(m.accepted_from_draft, m.total_output_tokens);
    m.graph_success = ratio(m.stages_with_merged_accept, m.stages);
    m.mean_accepted_per_stage = ratio(m.accepted_from_draft, m.stages);
    m.mean_drafted_per_stage = ratio(m.drafted_token_total, m.stages);
    m.modeled = phase_costs(&m, h.target_cost, h.draft_cost);
    m.modeled_baseline = h.target_cost.cost_of(&m.baseline_work);
    m.modeled_speedup = modeled_speedup(&m, h.target_cost, h.draft_cost);
    Ok(m)
}

fn phase_costs(m: &RunMetrics, target: CostParams, draft: CostParams) -> PhaseCosts {
    PhaseCosts {
        draft: draft.cost_of(&m.draft_work),
        verify: target.cost_of(&m.verify_work),
        others: draft.cost_of(&m.others_work),
    }
}

/// Modeled cost of target-only greedy decoding of the same outputs divided by
/// the modeled cost of the run. Cache bookkeeping is charged at the draft
/// model's per-token rate.
pub fn modeled_speedup(m: &RunMetrics, target: CostParams, draft: CostParams) -> f64 {
    let run = phase_costs(m, target, draft).total();
    let base = target.cost_of(&m.baseline_work);
    if run > 0.0 {
        base / run
    } else if base == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

impl RunMetrics {
    pub fn with_timings(mut self, timings: &[TimingRecord]) -> Self {
        let mut w = PhaseCosts::default();
        for t in timings {
            w.draft += t.timing.draft;
            w.verify += t.timing.verify;
            w.others += t.timing.others;
        }
        self.wall = Some(w);
        self
    }

    /// Checks the counting identities that hold for every run.
    pub fn check_identities(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Trace(m.to_string()));
        if self.total_output_tokens != self.accepted_from_draft + self.stages {
            return bad("output tokens differ from accepted tokens plus stages");
        }
        if !(0.0..=1.0).contains(&self.acceptance_rate) || !(0.0..=1.0).contains(&self.graph_success) {
            return bad("rate outside [0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::draft::DraftConfig;
    use crate::model::{LanguageModel, ScriptedModel};
    use crate::session::{run_session, SessionConfig};
    use crate::trace::TraceHeader;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(mode: Mode, draft_cost: CostParams) -> RunMetrics {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let target = ScriptedModel::random(6, 2, 3.0, &mut rng);
        let draft = target.perturbed(0.2, 3.0, &mut rng).with_cost(draft_cost);
        let cfg = SessionConfig {
            draft: DraftConfig { mode, ..Default::default() },
            max_output: 60,
            ..Default::default()
        };
        let sessions: Vec<_> = (1..5u32)
            .map(|p| run_session(&draft, &target, &[p], &cfg, Some(0), &mut rng).unwrap())
            .collect();
        let h = TraceHeader::new("m", cfg, 6, draft.cost(), target.cost());
        compute_metrics(&Trace::from_sessions(h, &sessions)).unwrap()
    }

    #[test]
    fn identities_and_special_modes() {
        for mode in Mode::ALL {
            let m = run(mode, CostParams::DRAFT);
            m.check_identities().unwrap();
            if mode != Mode::Gsd {
                assert_eq!(m.graph_success, 0.0);
            }
        }
        let v = run(Mode::Vanilla, CostParams::DRAFT);
        assert_eq!(v.modeled_speedup, 1.0);
        assert_eq!(v.accepted_from_draft, 0);
    }

    #[test]
    fn speedup_falls_with_draft_cost() {
        let m = run(Mode::Ssd, CostParams::DRAFT);
        let cheap = modeled_speedup(&m, CostParams::TARGET, CostParams::DRAFT);
        let dear = modeled_speedup(&m, CostParams::TARGET, CostParams::DRAFT.scaled(2.0));
        let equal = modeled_speedup(&m, CostParams::TARGET, CostParams::TARGET);
        assert!(cheap > dear && dear > equal);
        assert!(equal < 1.0);
    }

    #[test]
    fn free_draft_gives_forward_reduction() {
        let m = run(Mode::Ssd, CostParams::ZERO);
        let per_forward = CostParams { per_forward: 1.0, per_token: 0.0, attention: 0.0 };
        let s = modeled_speedup(&m, per_forward, CostParams::ZERO);
        assert!((s - (m.mean_accepted_per_stage + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn rates_by_hand() {
        assert_eq!(ratio(795, 1000), 0.795);
        assert_eq!(ratio(28, 100), 0.28);
        assert_eq!(ratio(1, 0), 0.0);
    }
}
