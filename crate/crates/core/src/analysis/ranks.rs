use serde::{Deserialize, Serialize};

use crate::trace::{TimingRecord, Trace};

/// Outcome counts of verification steps, by 1-based rank of the accepted
/// child.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChildRankStats {
    pub accepted: Vec<u64>,
    pub rejected: u64,
}

impl ChildRankStats {
    pub fn steps(&self) -> u64 {
        self.accepted.iter().sum::<u64>() + self.rejected
    }

    pub fn accepts(&self) -> u64 {
        self.accepted.iter().sum()
    }

    /// Share of all steps that accepted the rank-`r` child.
    pub fn fraction(&self, r: usize) -> f64 {
        let n = self.steps();
        if n == 0 {
            return 0.0;
        }
        self.accepted.get(r - 1).copied().unwrap_or(0) as f64 / n as f64
    }

    /// Share of acceptances that went to the rank-`r` child.
    pub fn share_of_accepts(&self, r: usize) -> f64 {
        let n = self.accepts();
        if n == 0 {
            return 0.0;
        }
        self.accepted.get(r - 1).copied().unwrap_or(0) as f64 / n as f64
    }

    pub fn rejection_fraction(&self) -> f64 {
        let n = self.steps();
        if n == 0 {
            0.0
        } else {
            self.rejected as f64 / n as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,count,fraction_of_steps,fraction_of_accepts\n");
        for r in 1..=self.accepted.len() {
            s += &format!(
                "{r},{},{},{}\n",
                self.accepted[r - 1],
                self.fraction(r),
                self.share_of_accepts(r)
            );
        }
        s += &format!("reject,{},{},\n", self.rejected, self.rejection_fraction());
        s
    }
}

pub fn child_position_acceptance(trace: &Trace) -> ChildRankStats {
    let k = trace.header.session.draft.k.max(1);
    let mut st = ChildRankStats { accepted: vec![0; k], rejected: 0 };
    for s in trace.stages() {
        for step in &s.steps {
            match step {
                Some(r) => {
                    if *r > st.accepted.len() {
                        st.accepted.resize(*r, 0);
                    }
                    st.accepted[r - 1] += 1;
                }
                None => st.rejected += 1,
            }
        }
    }
    st
}

/// Summed wall-clock seconds per phase.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingSummary {
    pub stages: usize,
    pub draft: f64,
    pub verify: f64,
    pub others: f64,
    pub total: f64,
}

pub fn timing_summary(timings: &[TimingRecord]) -> TimingSummary {
    let mut t = TimingSummary { stages: timings.len(), ..Default::default() };
    for r in timings {
        t.draft += r.timing.draft;
        t.verify += r.timing.verify;
        t.others += r.timing.others;
        t.total += r.timing.total();
    }
    t
}
