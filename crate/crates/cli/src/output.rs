use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use cascade_core::analysis::ContributionReport;
use cascade_core::ingest::write_atomic;
use cascade_core::CurvePoint;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

/// Collects the files a command writes, each written atomically.
pub struct Sink {
    dir: PathBuf,
    written: Vec<String>,
}

impl Sink {
    pub fn new(dir: &Path) -> Self {
        Sink {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        write_atomic(&self.dir.join(name), bytes)
            .map_err(|e| Failure::Input(anyhow::Error::new(e).context("writing output")))?;
        self.record(name);
        Ok(())
    }

    pub fn put_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        self.put(name, json(value).as_bytes())
    }

    /// Notes a file written by other means.
    pub fn record(&mut self, name: &str) {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
    }

    pub fn into_written(self) -> Vec<String> {
        self.written
    }
}

pub fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

pub fn jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut s = String::new();
    for row in rows {
        s.push_str(&serde_json::to_string(row).expect("row serializes"));
        s.push('\n');
    }
    s
}

/// `t_1.. , [s_1..], mean_cost_flops, accuracy_pct`, one row per point.
pub fn curve_csv(
    points: &[CurvePoint],
    stages: usize,
    with_skips: bool,
) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=stages).map(|j| format!("t_{j}")).collect();
    if with_skips {
        header.extend((1..=stages).map(|j| format!("s_{j}")));
    }
    header.push("mean_cost_flops".into());
    header.push("accuracy_pct".into());
    let fail = |e: csv::Error| Failure::Invariant(anyhow::Error::new(e).context("formatting CSV"));
    w.write_record(&header).map_err(fail)?;
    for p in points {
        let mut row: Vec<String> = p.thresholds.iter().map(f64::to_string).collect();
        if with_skips {
            row.extend(p.skip_thresholds.iter().map(f64::to_string));
        }
        row.push(p.mean_cost.to_string());
        row.push(p.accuracy.to_string());
        w.write_record(&row).map_err(fail)?;
    }
    w.into_inner()
        .map_err(|e| Failure::Invariant(anyhow::anyhow!("formatting CSV: {e}")))
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Aligned text rendering of a contribution report.
pub fn contribution_table(report: &ContributionReport) -> String {
    let header = [
        "model",
        "answered",
        "share%",
        "acc%",
        "escalated",
        "acc_esc%",
        "drop",
        "prev_acc%",
        "gain",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
    for m in &report.models {
        rows.push(vec![
            m.model_id.clone(),
            m.answered_count.to_string(),
            format!("{:.2}", m.answered_fraction),
            opt(m.accuracy_on_answered, 2),
            m.escalated_count
                .map_or_else(|| "-".into(), |c| c.to_string()),
            opt(m.accuracy_on_escalated, 2),
            opt(m.escalation_drop, 2),
            opt(m.previous_accuracy_on_answered, 2),
            opt(m.takeover_gain, 2),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, &w))| {
                if c == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    let _ = writeln!(
        out,
        "overall accuracy {:.2}% over {} instances",
        report.overall_accuracy, report.instance_count
    );
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<InputDigest, Failure> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Input)?;
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}
