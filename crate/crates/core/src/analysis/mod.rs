//! Measurements over traces and draft graphs.

mod kl;
mod metrics;
mod overlap;
mod ranks;

pub use kl::{kl_divergence, merge_kl_samples, merge_kl_study, KlRow, KlTable, KL_EPSILON};
pub use metrics::{compute_metrics, modeled_speedup, PhaseCosts, RunMetrics};
pub use overlap::{ngram_overlap, OverlapStats};
pub use ranks::{child_position_acceptance, timing_summary, ChildRankStats, TimingSummary};
