//! Voucher tracing and the app-adoption baseline over a fixed outbreak.
//!
//! All randomness is drawn up front, per agent and in id order, from a
//! stream keyed by the run seed. Whether an agent is named, complies, or
//! tests positive therefore depends only on its own uniforms and the
//! parameters, never on the order events are processed. Raising a
//! probability, the voucher cap, or adoption can only add detections for
//! the same seed, which is what makes parameter sweeps with common random
//! numbers monotone.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::config::{SimConfig, SYMPTOM_ONSET_DAYS};
use super::outbreak::TransmissionTree;
use super::{derive_seed, STREAM_FALSE_CONTACTS, STREAM_TRACE};
use crate::testing_flow::TestResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMethod {
    /// Citizen-driven vouchers.
    Acdc,
    /// Phone app: an edge is traceable only if both ends run the app.
    App,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentTrace {
    /// Diagnosed without a voucher: a seed, or a self-reported case.
    pub index_case: bool,
    pub received_voucher_day: Option<u32>,
    pub tested_day: Option<u32>,
    pub test_result: Option<TestResult>,
    /// Found by tracing: tested after receiving a voucher, and positive.
    pub detected: bool,
    /// Day the positive result came back (or diagnosis day for index cases).
    pub detected_day: Option<u32>,
    /// Voucher hand-offs between the nearest index case and this agent.
    pub hops: Option<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceTotals {
    /// Vouchers given to diagnosed people (index cases and all positives).
    pub vouchers_issued: u64,
    /// Recipients who booked a test.
    pub redemptions: u64,
    pub tests_performed: u64,
    pub true_positives: u64,
    pub false_negatives: u64,
    pub false_positives: u64,
    /// Redemptions by recipients who were not infected.
    pub wasted_uses: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceOutcome {
    pub method: TraceMethod,
    pub agents: Vec<AgentTrace>,
    pub totals: TraceTotals,
}

impl TraceOutcome {
    pub fn detected_count(&self) -> usize {
        self.agents.iter().filter(|a| a.detected).count()
    }
}

#[derive(Debug, Clone, Copy)]
struct Draws {
    recall: f64,
    backward: f64,
    comply: f64,
    test: f64,
    adopt: f64,
    self_report: f64,
}

#[derive(Debug, Clone, Copy)]
struct FalseContact {
    comply: f64,
    test: f64,
}

/// Mean number of false contacts is capped so a single draw stays bounded.
const MAX_FALSE_CONTACTS: u32 = 50;

fn draw_agents(tree: &TransmissionTree, seed: u64) -> Vec<Draws> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_TRACE, 0));
    (0..tree.len())
        .map(|_| Draws {
            recall: rng.random(),
            backward: rng.random(),
            comply: rng.random(),
            test: rng.random(),
            adopt: rng.random(),
            self_report: rng.random(),
        })
        .collect()
}

fn draw_false_contacts(
    tree: &TransmissionTree,
    config: &SimConfig,
    seed: u64,
) -> Vec<Vec<FalseContact>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_FALSE_CONTACTS, 0));
    let poisson = (config.false_contacts_mean > 0.0)
        .then(|| Poisson::new(config.false_contacts_mean).expect("validated mean"));
    (0..tree.len())
        .map(|_| {
            let n = poisson
                .as_ref()
                .map_or(0, |p| (p.sample(&mut rng) as u32).min(MAX_FALSE_CONTACTS));
            (0..n)
                .map(|_| FalseContact {
                    comply: rng.random(),
                    test: rng.random(),
                })
                .collect()
        })
        .collect()
}

/// Simulates citizen-driven voucher tracing. Deterministic given `seed`.
pub fn run_acdc_tracing(tree: &TransmissionTree, config: &SimConfig, seed: u64) -> TraceOutcome {
    run(tree, config, seed, TraceMethod::Acdc)
}

/// Simulates the app baseline on the same outbreak. Uses the same per-agent
/// draws as [`run_acdc_tracing`] for the same seed.
pub fn run_app_tracing(tree: &TransmissionTree, config: &SimConfig, seed: u64) -> TraceOutcome {
    run(tree, config, seed, TraceMethod::App)
}

struct Recipient {
    agent: usize,
    key: f64,
    handoff_day: u32,
}

fn run(
    tree: &TransmissionTree,
    config: &SimConfig,
    seed: u64,
    method: TraceMethod,
) -> TraceOutcome {
    let draws = draw_agents(tree, seed);
    let false_contacts = match method {
        TraceMethod::Acdc => draw_false_contacts(tree, config, seed),
        TraceMethod::App => Vec::new(),
    };
    let mut agents = vec![AgentTrace::default(); tree.len()];
    let mut totals = TraceTotals::default();
    // Someone already diagnosed or already holding a voucher is not handed another.
    let mut reached = vec![false; tree.len()];
    let mut acted = vec![false; tree.len()];
    let mut queue: BinaryHeap<Reverse<(u32, usize)>> = BinaryHeap::new();

    for a in tree.agents() {
        let self_reports =
            a.infector.is_some() && a.symptomatic && draws[a.id].self_report < config.p_self_report;
        if a.infector.is_none() || self_reports {
            queue.push(Reverse((a.infection_day + SYMPTOM_ONSET_DAYS, a.id)));
        }
    }

    let k = config.voucher_cap as usize;
    let adopts = |id: usize| draws[id].adopt < config.app_adoption;

    while let Some(Reverse((day, id))) = queue.pop() {
        if acted[id] {
            continue;
        }
        if !agents[id].detected {
            agents[id].index_case = true;
            agents[id].detected_day = Some(day);
            agents[id].hops = Some(0);
            reached[id] = true;
        }
        acted[id] = true;

        let mut candidates = Vec::new();
        let agent = &tree.agents()[id];
        if config.direction.forward() {
            for &c in tree.children(id) {
                if reached[c] {
                    continue;
                }
                let named = match method {
                    TraceMethod::Acdc => draws[c].recall < config.p_recall,
                    TraceMethod::App => adopts(id) && adopts(c),
                };
                if named {
                    candidates.push(Recipient {
                        agent: c,
                        key: draws[c].recall,
                        handoff_day: day.max(tree.agents()[c].infection_day),
                    });
                }
            }
        }
        if config.direction.backward() {
            if let Some(p) = agent.infector.filter(|&p| !reached[p]) {
                let named = match method {
                    TraceMethod::Acdc => draws[id].backward < config.p_recall,
                    TraceMethod::App => adopts(id) && adopts(p),
                };
                if named {
                    candidates.push(Recipient {
                        agent: p,
                        key: draws[id].backward,
                        handoff_day: day,
                    });
                }
            }
        }

        if method == TraceMethod::Acdc {
            totals.vouchers_issued += 1;
            // Smallest keys first: a uniform subset of the named people, and
            // nested as the cap or recall probability grows.
            candidates.sort_by(|a, b| a.key.total_cmp(&b.key).then(a.agent.cmp(&b.agent)));
            candidates.truncate(k);
        }

        let hops = agents[id].hops.unwrap_or(0) + 1;
        for r in &candidates {
            reached[r.agent] = true;
            let trace = &mut agents[r.agent];
            trace.received_voucher_day = Some(r.handoff_day);
            let d = draws[r.agent];
            if d.comply >= config.p_comply {
                continue;
            }
            totals.redemptions += 1;
            totals.tests_performed += 1;
            let tested = r.handoff_day + config.booking_delay_days;
            trace.tested_day = Some(tested);
            if d.test < config.test_sensitivity {
                let result_day = tested + config.result_delay_days;
                trace.test_result = Some(TestResult::Positive);
                trace.detected = true;
                trace.detected_day = Some(result_day);
                trace.hops = Some(hops);
                totals.true_positives += 1;
                queue.push(Reverse((result_day, r.agent)));
            } else {
                trace.test_result = Some(TestResult::Negative);
                totals.false_negatives += 1;
            }
        }

        if method == TraceMethod::Acdc {
            let spare = k.saturating_sub(candidates.len());
            for fc in false_contacts[id].iter().take(spare) {
                if fc.comply >= config.p_comply {
                    continue;
                }
                totals.redemptions += 1;
                totals.tests_performed += 1;
                totals.wasted_uses += 1;
                if fc.test < 1.0 - config.test_specificity {
                    // A false positive is handed a voucher of their own, but
                    // has no infectees to pass it to.
                    totals.false_positives += 1;
                    totals.vouchers_issued += 1;
                }
            }
        }
    }

    TraceOutcome {
        method,
        agents,
        totals,
    }
}
