//! Branching-process outbreaks and how much of them voucher tracing finds.
//!
//! [`generate_outbreak`] grows a ground-truth transmission forest.
//! [`run_acdc_tracing`] replays voucher hand-offs over it and
//! [`run_app_tracing`] does the same for a phone-app baseline where an edge
//! is traceable only if both people run the app. [`exact_expected_coverage`]
//! computes expected coverage exactly on small forests to check the sampler.

mod config;
mod experiment;
mod oracle;
mod outbreak;
pub mod report;
mod trace;

use thiserror::Error;

pub use config::{
    SimConfig, TraceDirection, GENERATION_INTERVAL_DAYS, MAX_OFFSPRING_CAP, MAX_OFFSPRING_MEAN,
    SWEEPABLE, SYMPTOM_ONSET_DAYS,
};
pub use experiment::{
    run_experiment, run_replicate, sweep, Estimate, Experiment, MethodSummary, ReplicateResult,
    RunMetrics, SweepPoint,
};
pub use oracle::{exact_expected_coverage, ORACLE_MAX_CHILDREN, ORACLE_MAX_DEPTH};
pub use outbreak::{generate_outbreak, Agent, OffspringDistribution, TransmissionTree};
pub use trace::{
    run_acdc_tracing, run_app_tracing, AgentTrace, TraceMethod, TraceOutcome, TraceTotals,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("instance too large for exact enumeration: {0}")]
    InstanceTooLarge(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
}

pub(crate) const STREAM_OUTBREAK: u64 = 1;
pub(crate) const STREAM_TRACE: u64 = 2;
pub(crate) const STREAM_FALSE_CONTACTS: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent 64-bit seed for `(seed, stream, index)`.
pub(crate) fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}
