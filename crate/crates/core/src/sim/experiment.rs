use rayon::prelude::*;

use super::config::SimConfig;
use super::outbreak::{generate_outbreak, TransmissionTree};
use super::trace::{run_acdc_tracing, run_app_tracing, TraceOutcome, TraceTotals};
use super::SimError;

/// Two-sided 95% normal quantile.
const Z_95: f64 = 1.959_963_984_540_054;

/// Scores for one tracing run against its outbreak.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub non_seed_infections: usize,
    pub detected: usize,
    /// `None` when the outbreak has no non-seed infections.
    pub coverage: Option<f64>,
    pub mean_days_infection_to_detection: Option<f64>,
    pub tests_per_detection: Option<f64>,
    /// Mean voucher hops over detected agents.
    pub mean_chain_depth: Option<f64>,
    pub max_chain_depth: u32,
    pub totals: TraceTotals,
}

impl RunMetrics {
    pub fn score(tree: &TransmissionTree, outcome: &TraceOutcome) -> Self {
        let non_seed_infections = tree.non_seed_count();
        let detected: Vec<_> = outcome
            .agents
            .iter()
            .zip(tree.agents())
            .filter(|(t, a)| t.detected && a.infector.is_some())
            .collect();
        let n = detected.len();
        let mean = |sum: f64| (n > 0).then(|| sum / n as f64);
        let delay_sum: f64 = detected
            .iter()
            .map(|(t, a)| {
                f64::from(t.detected_day.unwrap_or(a.infection_day)) - f64::from(a.infection_day)
            })
            .sum();
        let hop_sum: f64 = detected
            .iter()
            .map(|(t, _)| f64::from(t.hops.unwrap_or(0)))
            .sum();
        RunMetrics {
            non_seed_infections,
            detected: n,
            coverage: (non_seed_infections > 0).then(|| n as f64 / non_seed_infections as f64),
            mean_days_infection_to_detection: mean(delay_sum),
            tests_per_detection: (n > 0).then(|| outcome.totals.tests_performed as f64 / n as f64),
            mean_chain_depth: mean(hop_sum),
            max_chain_depth: detected
                .iter()
                .filter_map(|(t, _)| t.hops)
                .max()
                .unwrap_or(0),
            totals: outcome.totals,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub index: u32,
    pub seed: u64,
    pub acdc: RunMetrics,
    pub app: RunMetrics,
}

/// Mean with spread over the replicates where a quantity is defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    /// Sums in the given order so results do not depend on scheduling.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let std_dev = var.sqrt();
        let std_error = std_dev / (n as f64).sqrt();
        Some(Estimate {
            n,
            mean,
            std_dev,
            std_error,
            ci_low: mean - Z_95 * std_error,
            ci_high: mean + Z_95 * std_error,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub coverage: Option<Estimate>,
    pub days_infection_to_detection: Option<Estimate>,
    pub tests_per_detection: Option<Estimate>,
    pub chain_depth: Option<Estimate>,
    pub max_chain_depth: u32,
}

impl MethodSummary {
    fn from_runs<'a>(runs: impl Iterator<Item = &'a RunMetrics> + Clone) -> Self {
        let collect = |f: fn(&RunMetrics) -> Option<f64>| {
            let values: Vec<f64> = runs.clone().filter_map(f).collect();
            Estimate::from_values(&values)
        };
        MethodSummary {
            coverage: collect(|r| r.coverage),
            days_infection_to_detection: collect(|r| r.mean_days_infection_to_detection),
            tests_per_detection: collect(|r| r.tests_per_detection),
            chain_depth: collect(|r| r.mean_chain_depth),
            max_chain_depth: runs.map(|r| r.max_chain_depth).max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub config: SimConfig,
    pub replicates: Vec<ReplicateResult>,
    pub acdc: MethodSummary,
    pub app: MethodSummary,
}

/// Runs one replicate: a fresh outbreak, then both tracing methods on it
/// with the same per-agent draws.
pub fn run_replicate(config: &SimConfig, index: u32) -> ReplicateResult {
    let seed = config.rng_seed.wrapping_add(u64::from(index));
    let tree = generate_outbreak(config, seed);
    let acdc = run_acdc_tracing(&tree, config, seed);
    let app = run_app_tracing(&tree, config, seed);
    ReplicateResult {
        index,
        seed,
        acdc: RunMetrics::score(&tree, &acdc),
        app: RunMetrics::score(&tree, &app),
    }
}

/// Replicate `r` uses seed `rng_seed + r`. Replicates run in parallel and
/// are reduced in index order.
pub fn run_experiment(config: &SimConfig, n_replicates: u32) -> Result<Experiment, SimError> {
    config.validate()?;
    if n_replicates == 0 {
        return Err(SimError::InvalidConfig(
            "need at least one replicate".into(),
        ));
    }
    let replicates: Vec<ReplicateResult> = (0..n_replicates)
        .into_par_iter()
        .map(|i| run_replicate(config, i))
        .collect();
    Ok(Experiment {
        config: config.clone(),
        acdc: MethodSummary::from_runs(replicates.iter().map(|r| &r.acdc)),
        app: MethodSummary::from_runs(replicates.iter().map(|r| &r.app)),
        replicates,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub param: String,
    pub value: f64,
    pub experiment: Experiment,
}

/// Runs `run_experiment` at each value of `param`. Every point keeps the
/// base seed, so all points see the same random numbers.
pub fn sweep(
    param: &str,
    values: &[f64],
    base: &SimConfig,
    n_replicates: u32,
) -> Result<Vec<SweepPoint>, SimError> {
    let configs = values
        .iter()
        .map(|&v| base.with_param(param, v))
        .collect::<Result<Vec<_>, _>>()?;
    configs
        .iter()
        .zip(values)
        .map(|(cfg, &value)| {
            Ok(SweepPoint {
                param: param.to_owned(),
                value,
                experiment: run_experiment(cfg, n_replicates)?,
            })
        })
        .collect()
}
