//! Paper voucher batches for sealed envelopes.
//!
//! `codes.txt` holds one rendered code per line and goes into envelopes.
//! `checklist.txt` and `checklist.csv` stay at the testing center: one row
//! per code with a tally box per allowed use and a blank issue-date field.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use acdc_core::VoucherCode;
use anyhow::{bail, Context};
use chrono::{DateTime, TimeDelta, Utc};

pub struct PaperBatch {
    pub batch_id: String,
    pub cap: u32,
    pub created_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    pub codes: Vec<VoucherCode>,
}

impl PaperBatch {
    pub fn codes_file(&self) -> String {
        self.codes.iter().map(|c| c.render() + "\n").collect()
    }

    pub fn checklist_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Voucher checklist, batch {}", self.batch_id);
        let _ = writeln!(out, "Created {}", self.created_at.format("%Y-%m-%d"));
        let _ = writeln!(out, "Valid until {}", self.expires_at.format("%Y-%m-%d"));
        let _ = writeln!(
            out,
            "Tick one box per test booked with the code. Uses per code: {}",
            self.cap
        );
        let _ = writeln!(out);
        let boxes = vec!["[ ]"; self.cap as usize].join(" ");
        for code in &self.codes {
            let _ = writeln!(out, "{}  {}  issued: ____________", code.render(), boxes);
        }
        out
    }

    pub fn checklist_csv(&self) -> anyhow::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["code".to_owned()];
        header.extend((1..=self.cap).map(|i| format!("use_{i}")));
        header.push("issued".to_owned());
        w.write_record(&header)?;
        for code in &self.codes {
            let mut row = vec![code.render()];
            row.extend((0..=self.cap).map(|_| String::new()));
            w.write_record(&row)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

pub fn run(n: u32, cap: u32, out: &Path, ttl_days: u32, store: &Path) -> anyhow::Result<()> {
    if n == 0 {
        bail!("--n must be at least 1");
    }
    if cap == 0 {
        bail!("--cap must be at least 1");
    }
    let deployment = crate::open_store(store)?;
    let now = Utc::now();
    let ttl = TimeDelta::days(ttl_days.into());
    let mut codes = Vec::with_capacity(n as usize);
    for _ in 0..n {
        codes.push(deployment.ledger.issue_voucher(cap, ttl, now)?.code);
    }
    let batch = PaperBatch {
        batch_id: format!("batch-{}", uuid::Uuid::new_v4().simple()),
        cap,
        created_at: now,
        expires_at: now + ttl,
        codes,
    };
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let write = |name: &str, text: &str| {
        let path = out.join(name);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    };
    write("codes.txt", &batch.codes_file())?;
    write("checklist.txt", &batch.checklist_text())?;
    write("checklist.csv", &batch.checklist_csv()?)?;
    println!(
        "{}\t{}\t{}",
        batch.batch_id,
        batch.codes.len(),
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use acdc_core::{code, CodePolicy, Namespace};

    fn batch(n: usize, cap: u32) -> PaperBatch {
        let policy = CodePolicy::default();
        let mut rng = rand::rng();
        PaperBatch {
            batch_id: "batch-test".into(),
            cap,
            created_at: Utc::now(),
            expires_at: Utc::now(),
            codes: (0..n)
                .map(|_| code::generate_code(&policy, Namespace::Voucher, &mut rng).unwrap())
                .collect(),
        }
    }

    #[test]
    fn checklist_rows_match_codes() {
        let b = batch(3, 6);
        let text = b.checklist_text();
        let rows: Vec<&str> = text.lines().filter(|l| l.contains("[ ]")).collect();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.matches("[ ]").count() == 6));
        assert_eq!(b.codes_file().lines().count(), 3);
        let csv = b.checklist_csv().unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(
            csv.lines().next().unwrap(),
            "code,use_1,use_2,use_3,use_4,use_5,use_6,issued"
        );
        assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 8));
    }
}
