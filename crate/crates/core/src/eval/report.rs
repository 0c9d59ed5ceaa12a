//! Report emission: a versioned JSON document plus an aligned text table
//! with Max/Mean/Min rows per metric per window size.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::train::{CvOutcome, FoldResult, MetricAggregate};
use crate::io::atomic_write;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowReport {
    pub window: usize,
    pub folds: Vec<FoldResult>,
    pub summary: crate::eval::train::CvSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub windows: Vec<WindowReport>,
}

impl EvalReport {
    pub fn from_outcomes(outcomes: Vec<CvOutcome>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot emit a report without completed folds".into(),
            ));
        }
        Ok(EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            windows: outcomes
                .into_iter()
                .map(|o| WindowReport {
                    window: o.window,
                    folds: o.folds,
                    summary: o.summary,
                })
                .collect(),
        })
    }
}

/// Aligned text table with one Max/Mean/Min block per metric and one column
/// per window size.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<12}{:<8}", "Metric", ""));
    for w in &report.windows {
        out.push_str(&format!("{:>10}", format!("w={}", w.window)));
    }
    out.push('\n');
    let rows: [(&str, fn(&crate::eval::train::CvSummary) -> MetricAggregate); 4] = [
        ("Accuracy", |s| s.accuracy),
        ("F1 score", |s| s.f1),
        ("Precision", |s| s.precision),
        ("Recall", |s| s.recall),
    ];
    let aggs: [(&str, fn(MetricAggregate) -> f64); 3] = [
        ("Max", |a| a.max),
        ("Mean", |a| a.mean),
        ("Min", |a| a.min),
    ];
    for (name, pick) in rows {
        for (agg_name, agg) in aggs {
            out.push_str(&format!(
                "{:<12}{:<8}",
                if agg_name == "Max" { name } else { "" },
                agg_name
            ));
            for w in &report.windows {
                out.push_str(&format!("{:>9.1}%", agg(pick(&w.summary)) * 100.0));
            }
            out.push('\n');
        }
    }
    out
}

/// Writes `<stem>.json` and `<stem>.txt`.
pub fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    let json = serde_json::to_vec_pretty(report)
        .map_err(|e| Error::format("report", e.to_string()))?;
    atomic_write(&dir.join(format!("{stem}.json")), &json)?;
    atomic_write(&dir.join(format!("{stem}.txt")), render_table(report).as_bytes())
}
