//! Tab-separated metric tables.
//!
//! Summary tables have one row per sweep point (a single `base` row when no
//! sweep is run) with these columns:
//!
//! | column | meaning |
//! |---|---|
//! | `param`, `value` | swept parameter and its value (`base`, `-` otherwise) |
//! | `replicates` | replicates run |
//! | `coverage_n` | replicates with at least one non-seed infection |
//! | `coverage_mean`, `coverage_std`, `coverage_ci_low`, `coverage_ci_high` | voucher tracing detection coverage, 95% normal interval |
//! | `days_to_detection_mean` | mean days from infection to positive result |
//! | `tests_per_detection_mean` | tests performed per traced detection |
//! | `chain_depth_mean`, `chain_depth_max` | voucher hops from an index case |
//! | `app_coverage_mean`, `app_coverage_ci_low`, `app_coverage_ci_high` | app baseline coverage |
//!
//! Replicate tables have one row per replicate. Missing values print as `NA`
//! and every float has six decimals, so equal inputs give equal bytes.

use std::io::{self, Write};

use super::experiment::{Estimate, Experiment, SweepPoint};
use super::outbreak::TransmissionTree;
use super::trace::TraceOutcome;
use crate::testing_flow::TestResult;

pub const SUMMARY_HEADER: &[&str] = &[
    "param",
    "value",
    "replicates",
    "coverage_n",
    "coverage_mean",
    "coverage_std",
    "coverage_ci_low",
    "coverage_ci_high",
    "days_to_detection_mean",
    "tests_per_detection_mean",
    "chain_depth_mean",
    "chain_depth_max",
    "app_coverage_mean",
    "app_coverage_ci_low",
    "app_coverage_ci_high",
];

pub const REPLICATE_HEADER: &[&str] = &[
    "replicate",
    "seed",
    "non_seed_infections",
    "detected",
    "coverage",
    "days_to_detection",
    "tests_performed",
    "tests_per_detection",
    "chain_depth_mean",
    "chain_depth_max",
    "vouchers_issued",
    "redemptions",
    "wasted_uses",
    "false_positives",
    "app_detected",
    "app_coverage",
];

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| format!("{x:.6}"))
}

fn est(e: &Option<Estimate>, f: fn(&Estimate) -> f64) -> String {
    num(e.as_ref().map(f))
}

fn summary_row(param: &str, value: &str, exp: &Experiment) -> Vec<String> {
    let (a, b) = (&exp.acdc, &exp.app);
    vec![
        param.to_owned(),
        value.to_owned(),
        exp.replicates.len().to_string(),
        a.coverage.map_or(0, |e| e.n).to_string(),
        est(&a.coverage, |e| e.mean),
        est(&a.coverage, |e| e.std_dev),
        est(&a.coverage, |e| e.ci_low),
        est(&a.coverage, |e| e.ci_high),
        est(&a.days_infection_to_detection, |e| e.mean),
        est(&a.tests_per_detection, |e| e.mean),
        est(&a.chain_depth, |e| e.mean),
        a.max_chain_depth.to_string(),
        est(&b.coverage, |e| e.mean),
        est(&b.coverage, |e| e.ci_low),
        est(&b.coverage, |e| e.ci_high),
    ]
}

fn write_row(out: &mut impl Write, cells: &[String]) -> io::Result<()> {
    writeln!(out, "{}", cells.join("\t"))
}

fn write_header(out: &mut impl Write, header: &[&str]) -> io::Result<()> {
    writeln!(out, "{}", header.join("\t"))
}

pub fn write_summary(out: &mut impl Write, exp: &Experiment) -> io::Result<()> {
    write_header(out, SUMMARY_HEADER)?;
    write_row(out, &summary_row("base", "-", exp))
}

pub fn write_sweep(out: &mut impl Write, points: &[SweepPoint]) -> io::Result<()> {
    write_header(out, SUMMARY_HEADER)?;
    for p in points {
        write_row(
            out,
            &summary_row(&p.param, &format!("{}", p.value), &p.experiment),
        )?;
    }
    Ok(())
}

pub fn write_replicates(out: &mut impl Write, exp: &Experiment) -> io::Result<()> {
    write_header(out, REPLICATE_HEADER)?;
    for r in &exp.replicates {
        let m = &r.acdc;
        write_row(
            out,
            &[
                r.index.to_string(),
                r.seed.to_string(),
                m.non_seed_infections.to_string(),
                m.detected.to_string(),
                num(m.coverage),
                num(m.mean_days_infection_to_detection),
                m.totals.tests_performed.to_string(),
                num(m.tests_per_detection),
                num(m.mean_chain_depth),
                m.max_chain_depth.to_string(),
                m.totals.vouchers_issued.to_string(),
                m.totals.redemptions.to_string(),
                m.totals.wasted_uses.to_string(),
                m.totals.false_positives.to_string(),
                r.app.detected.to_string(),
                num(r.app.coverage),
            ],
        )?;
    }
    Ok(())
}

/// One line per agent: ground truth next to what tracing did.
pub fn write_event_log(
    out: &mut impl Write,
    tree: &TransmissionTree,
    outcome: &TraceOutcome,
) -> io::Result<()> {
    writeln!(
        out,
        "agent\tinfector\tinfection_day\tsymptomatic\tindex_case\tvoucher_day\ttested_day\tresult\tdetected\tdetected_day\thops"
    )?;
    let opt = |v: Option<u32>| v.map_or_else(|| "NA".to_owned(), |d| d.to_string());
    for (a, t) in tree.agents().iter().zip(&outcome.agents) {
        let result = match t.test_result {
            Some(TestResult::Positive) => "positive",
            Some(TestResult::Negative) => "negative",
            Some(TestResult::Inconclusive) => "inconclusive",
            None => "NA",
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            a.id,
            a.infector
                .map_or_else(|| "NA".to_owned(), |p| p.to_string()),
            a.infection_day,
            a.symptomatic,
            t.index_case,
            opt(t.received_voucher_day),
            opt(t.tested_day),
            result,
            t.detected,
            opt(t.detected_day),
            opt(t.hops),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_experiment, sweep, SimConfig};

    fn render(f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn summary_has_documented_columns() {
        let exp = run_experiment(&SimConfig::default(), 5).unwrap();
        let text = render(|b| write_summary(b, &exp));
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split('\t').count(), SUMMARY_HEADER.len());
        assert_eq!(lines[1].split('\t').count(), SUMMARY_HEADER.len());
        assert!(lines[0].contains("coverage_ci_low"));
    }

    #[test]
    fn sweep_rows_and_replicate_rows() {
        let cfg = SimConfig::default();
        let points = sweep("k", &[1.0, 2.0, 3.0], &cfg, 3).unwrap();
        assert_eq!(render(|b| write_sweep(b, &points)).lines().count(), 4);
        let exp = run_experiment(&cfg, 7).unwrap();
        let text = render(|b| write_replicates(b, &exp));
        assert_eq!(text.lines().count(), 8);
        assert!(text
            .lines()
            .all(|l| l.split('\t').count() == REPLICATE_HEADER.len()));
    }

    #[test]
    fn same_inputs_same_bytes() {
        let cfg = SimConfig::default();
        let a = render(|b| write_replicates(b, &run_experiment(&cfg, 20).unwrap()));
        let b = render(|b| write_replicates(b, &run_experiment(&cfg, 20).unwrap()));
        assert_eq!(a, b);
    }
}
