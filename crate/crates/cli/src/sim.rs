use std::fs;
use std::io::Write;
use std::path::PathBuf;

use acdc_core::sim::{self, report, SimConfig};
use anyhow::{bail, Context};
use clap::Args;

#[derive(Args)]
pub struct SimArgs {
    /// TOML file of simulation parameters; omitted keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    replicates: u32,
    /// Overrides rng_seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// PARAM=v1,v2,... or PARAM=a..b for whole numbers a through b.
    #[arg(long)]
    sweep: Option<String>,
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write one row per replicate (not available with --sweep).
    #[arg(long)]
    replicates_out: Option<PathBuf>,
    /// Also write the per-agent trace of the first replicate.
    #[arg(long)]
    events_out: Option<PathBuf>,
}

/// Parses `PARAM=v1,v2,...` or `PARAM=a..b`.
pub fn parse_sweep(spec: &str) -> anyhow::Result<(String, Vec<f64>)> {
    let Some((param, values)) = spec.split_once('=') else {
        bail!("sweep must look like PARAM=v1,v2,... or PARAM=a..b, got {spec:?}");
    };
    let param = param.trim();
    if !sim::SWEEPABLE.contains(&param) {
        bail!(
            "cannot sweep {param:?}; choose one of {}",
            sim::SWEEPABLE.join(", ")
        );
    }
    let values = values.trim();
    let parsed = if let Some((a, b)) = values.split_once("..") {
        let a: i64 = a
            .trim()
            .parse()
            .with_context(|| format!("bad range start {a:?}"))?;
        let b: i64 = b
            .trim()
            .parse()
            .with_context(|| format!("bad range end {b:?}"))?;
        if a > b {
            bail!("empty range {values:?}");
        }
        (a..=b).map(|v| v as f64).collect()
    } else {
        values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad sweep value {v:?}"))
            })
            .collect::<anyhow::Result<Vec<_>>>()?
    };
    if parsed.is_empty() {
        bail!("sweep has no values");
    }
    Ok((param.to_owned(), parsed))
}

pub fn run(args: &SimArgs) -> anyhow::Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            SimConfig::from_toml_str(&text).with_context(|| path.display().to_string())?
        }
        None => SimConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.rng_seed = seed;
    }
    let mut table = Vec::new();
    match &args.sweep {
        Some(spec) => {
            if args.replicates_out.is_some() || args.events_out.is_some() {
                bail!("--replicates-out and --events-out cannot be combined with --sweep");
            }
            let (param, values) = parse_sweep(spec)?;
            let points = sim::sweep(&param, &values, &config, args.replicates)?;
            report::write_sweep(&mut table, &points)?;
        }
        None => {
            let exp = sim::run_experiment(&config, args.replicates)?;
            report::write_summary(&mut table, &exp)?;
            if let Some(path) = &args.replicates_out {
                let mut buf = Vec::new();
                report::write_replicates(&mut buf, &exp)?;
                fs::write(path, buf).with_context(|| format!("cannot write {}", path.display()))?;
            }
            if let Some(path) = &args.events_out {
                let seed = exp.replicates[0].seed;
                let tree = sim::generate_outbreak(&config, seed);
                let outcome = sim::run_acdc_tracing(&tree, &config, seed);
                let mut buf = Vec::new();
                report::write_event_log(&mut buf, &tree, &outcome)?;
                fs::write(path, buf).with_context(|| format!("cannot write {}", path.display()))?;
            }
        }
    }
    match &args.out {
        Some(path) => {
            fs::write(path, &table).with_context(|| format!("cannot write {}", path.display()))?
        }
        None => std::io::stdout().write_all(&table)?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_specs() {
        assert_eq!(parse_sweep("k=1..8").unwrap().1.len(), 8);
        assert_eq!(
            parse_sweep("p_recall=0,0.5,1").unwrap(),
            ("p_recall".into(), vec![0.0, 0.5, 1.0])
        );
        assert!(parse_sweep("k").is_err());
        assert!(parse_sweep("gamma=1,2").is_err());
        assert!(parse_sweep("k=5..1").is_err());
        assert!(parse_sweep("k=1,x").is_err());
    }
}
