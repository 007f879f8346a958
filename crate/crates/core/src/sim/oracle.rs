//! Exact expected coverage for small outbreaks, by enumeration.
//!
//! Walks the tree from each index case. At a detected node it enumerates
//! every recall pattern over its infectees, every equally likely subset
//! when more are named than the cap allows, and every comply/test outcome
//! of the recipients, recursing into recipients that test positive.
//! Branches that are never reached contribute nothing, so the sum over all
//! outcome combinations reduces to this walk.

use super::config::SimConfig;
use super::outbreak::TransmissionTree;
use super::SimError;

pub const ORACLE_MAX_DEPTH: u32 = 2;
pub const ORACLE_MAX_CHILDREN: usize = 3;

/// Expected fraction of non-seed infections detected by forward voucher
/// tracing. Supports forests of depth at most 2 with at most 3 infectees per
/// person, forward tracing only, and no self-reporting.
pub fn exact_expected_coverage(
    tree: &TransmissionTree,
    config: &SimConfig,
) -> Result<f64, SimError> {
    config.validate()?;
    if tree.max_generation() > ORACLE_MAX_DEPTH {
        return Err(SimError::InstanceTooLarge(format!(
            "depth {} exceeds {ORACLE_MAX_DEPTH}",
            tree.max_generation()
        )));
    }
    if let Some(a) = tree
        .agents()
        .iter()
        .find(|a| tree.children(a.id).len() > ORACLE_MAX_CHILDREN)
    {
        return Err(SimError::InstanceTooLarge(format!(
            "agent {} has {} infectees, limit {ORACLE_MAX_CHILDREN}",
            a.id,
            tree.children(a.id).len()
        )));
    }
    if config.direction.backward() || config.p_self_report > 0.0 {
        return Err(SimError::InstanceTooLarge(
            "only forward tracing without self-reporting is enumerated".into(),
        ));
    }
    let non_seeds = tree.non_seed_count();
    if non_seeds == 0 {
        return Err(SimError::InstanceTooLarge("no non-seed infections".into()));
    }
    let detected: f64 = tree
        .seeds()
        .map(|s| expected_detected_below(tree, config, s.id))
        .sum();
    Ok(detected / non_seeds as f64)
}

/// Expected number of detections strictly below `node`, given that `node`
/// is diagnosed.
fn expected_detected_below(tree: &TransmissionTree, config: &SimConfig, node: usize) -> f64 {
    let children = tree.children(node);
    let k = config.voucher_cap as usize;
    let mut total = 0.0;
    for recall_mask in 0u32..(1 << children.len()) {
        let named: Vec<usize> = (0..children.len())
            .filter(|i| recall_mask & (1 << i) != 0)
            .map(|i| children[i])
            .collect();
        let p_pattern = bernoulli_pattern(config.p_recall, children.len(), recall_mask);
        if p_pattern == 0.0 {
            continue;
        }
        let subsets = subsets_of_size(&named, k.min(named.len()));
        let p_subset = 1.0 / subsets.len() as f64;
        for chosen in &subsets {
            total += p_pattern * p_subset * expected_from_recipients(tree, config, chosen);
        }
    }
    total
}

/// Enumerates, for each recipient, {declines, complies and tests negative,
/// complies and tests positive}.
fn expected_from_recipients(
    tree: &TransmissionTree,
    config: &SimConfig,
    recipients: &[usize],
) -> f64 {
    let outcomes = [
        (1.0 - config.p_comply, false),
        (config.p_comply * (1.0 - config.test_sensitivity), false),
        (config.p_comply * config.test_sensitivity, true),
    ];
    let combos = 3usize.pow(recipients.len() as u32);
    let mut total = 0.0;
    for combo in 0..combos {
        let mut p = 1.0;
        let mut detected = 0.0;
        let mut rest = combo;
        for &r in recipients {
            let (p_outcome, positive) = outcomes[rest % 3];
            rest /= 3;
            p *= p_outcome;
            if positive {
                detected += 1.0 + expected_detected_below(tree, config, r);
            }
        }
        total += p * detected;
    }
    total
}

fn bernoulli_pattern(p: f64, n: usize, mask: u32) -> f64 {
    (0..n)
        .map(|i| if mask & (1 << i) != 0 { p } else { 1.0 - p })
        .product()
}

fn subsets_of_size(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![Vec::new()];
    }
    if items.len() < size {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        for mut rest in subsets_of_size(&items[i + 1..], size - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}
