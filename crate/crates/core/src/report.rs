//! Accuracy tables: aligned plain text plus a machine-readable twin.
//!
//! Two layouts mirror the shapes used when comparing runs: a column per run
//! with Avg and Delta rows (descriptor ablations), and a FlyBird vs
//! Non-FlyBird pair. Avg is the arithmetic mean of the listed top-1 values;
//! Delta is second minus first and appears only for two-run tables.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::zseval::EvalReport;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportLayout {
    /// One column per run; Avg always, Delta when exactly two runs.
    Table3Like,
    /// Exactly two runs: FlyBird then Non-FlyBird, with their gap.
    Table6Like,
}

impl ReportLayout {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "table3" | "table3-like" | "ablation" => Some(ReportLayout::Table3Like),
            "table6" | "table6-like" | "flybird" => Some(ReportLayout::Table6Like),
            _ => None,
        }
    }
}

/// A rendered accuracy table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub columns: Vec<(String, f64)>,
    pub avg: f64,
    pub delta: Option<f64>,
}

impl ReportTable {
    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let label_width = self
            .columns
            .iter()
            .map(|(name, _)| name.len())
            .chain(["Avg".len(), "Delta".len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        for (name, top1) in &self.columns {
            out.push_str(&format!("{name:<label_width$}  {top1:.4}\n"));
        }
        out.push_str(&format!("{:<label_width$}  {:.4}\n", "Avg", self.avg));
        if let Some(delta) = self.delta {
            out.push_str(&format!("{:<label_width$}  {delta:+.4}\n", "Delta"));
        }
        out
    }

    /// Machine-readable twin, stable key order.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\"columns\":[");
        for (i, (name, top1)) in self.columns.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!(
                "{{\"label\":{},\"top1\":{top1}}}",
                json_string(name)
            ));
        }
        out.push_str(&format!("],\"avg\":{}", self.avg));
        match self.delta {
            Some(d) => out.push_str(&format!(",\"delta\":{d}}}")),
            None => out.push('}'),
        }
        out.push('\n');
        out
    }
}

fn json_string(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Assemble a table from labeled reports under the requested layout.
pub fn emit_report(
    reports: &[(String, EvalReport)],
    layout: ReportLayout,
) -> Result<ReportTable, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::LayoutMismatch("no reports given".into()));
    }
    if layout == ReportLayout::Table6Like && reports.len() != 2 {
        return Err(ReportError::LayoutMismatch(format!(
            "flybird layout needs exactly 2 reports, got {}",
            reports.len()
        )));
    }
    let first_classes: BTreeSet<&str> = reports[0].1.class_names().into_iter().collect();
    for (label, report) in &reports[1..] {
        let classes: BTreeSet<&str> = report.class_names().into_iter().collect();
        if classes != first_classes {
            return Err(ReportError::LayoutMismatch(format!(
                "report {label:?} covers a different class set"
            )));
        }
    }

    let columns: Vec<(String, f64)> = reports
        .iter()
        .map(|(label, r)| (label.clone(), r.top1()))
        .collect();
    let avg = columns.iter().map(|(_, t)| t).sum::<f64>() / columns.len() as f64;
    let delta = (columns.len() == 2).then(|| columns[1].1 - columns[0].1);
    Ok(ReportTable {
        columns,
        avg,
        delta,
    })
}
