//! Significance tables: mean ± std per metric with one-sided test codes.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{Metric, MetricVector};
use super::stats::{one_sided_t, significance_code, TTestKind};
use super::{mean, variance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation across runs (0 for a single run).
    pub std: f64,
    pub runs: usize,
    /// One-sided p-value against the baseline; `None` for the baseline row
    /// or when no test applies.
    pub p_value: Option<f64>,
}

impl MetricSummary {
    pub fn code(&self) -> &'static str {
        self.p_value.map(significance_code).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceEntry {
    pub label: String,
    /// In [`Metric::ALL`] order; `None` where the metric is undefined for
    /// some run.
    pub metrics: Vec<(Metric, Option<MetricSummary>)>,
}

fn column(runs: &[MetricVector], m: Metric) -> Option<Vec<f64>> {
    runs.iter().map(|r| r.get(m)).collect()
}

impl SignificanceEntry {
    /// Summarises `runs`, testing each metric against `baseline` when given.
    pub fn from_runs(label: &str, runs: &[MetricVector], baseline: Option<(&[MetricVector], TTestKind)>) -> Self {
        let metrics = Metric::ALL
            .iter()
            .map(|&m| {
                let summary = column(runs, m).filter(|v| !v.is_empty()).map(|v| {
                    let p_value = baseline.and_then(|(base, kind)| {
                        let b = column(base, m)?;
                        one_sided_t(&b, &v, kind).ok()
                    });
                    MetricSummary {
                        mean: mean(&v),
                        std: variance(&v).sqrt(),
                        runs: v.len(),
                        p_value,
                    }
                });
                (m, summary)
            })
            .collect();
        SignificanceEntry { label: label.to_string(), metrics }
    }

    pub fn summary(&self, m: Metric) -> Option<&MetricSummary> {
        self.metrics.iter().find(|(k, _)| *k == m).and_then(|(_, s)| s.as_ref())
    }
}

fn cell(s: &Option<MetricSummary>, precision: usize) -> String {
    match s {
        None => "undefined".to_string(),
        Some(s) => {
            let code = s.code();
            let base = format!("{:.p$} ± {:.p$}", s.mean, s.std, p = precision);
            if code.is_empty() {
                base
            } else {
                format!("{base} {code}")
            }
        }
    }
}

/// Aligned plain-text table followed by the significance legend.
pub fn render_text(entries: &[SignificanceEntry], precision: usize) -> String {
    let header: Vec<String> = std::iter::once(String::new())
        .chain(Metric::ALL.iter().map(|m| m.to_string()))
        .collect();
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|e| {
            std::iter::once(e.label.clone())
                .chain(e.metrics.iter().map(|(_, s)| cell(s, precision)))
                .collect()
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            std::iter::once(&header)
                .chain(&rows)
                .map(|r| r[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v}{}", " ".repeat(w - v.chars().count())))
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
    }
    writeln!(out, "Significance codes: 0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1").unwrap();
    out
}

/// One row per entry: label, then mean, std, p-value and code per metric.
pub fn render_csv(entries: &[SignificanceEntry]) -> String {
    let mut out = String::from("model");
    for m in Metric::ALL {
        let k = m.to_string().to_lowercase();
        write!(out, ",{k}_mean,{k}_std,{k}_p,{k}_code").unwrap();
    }
    out.push('\n');
    for e in entries {
        out.push_str(&csv_field(&e.label));
        for (_, s) in &e.metrics {
            match s {
                Some(s) => {
                    let p = s.p_value.map(|p| p.to_string()).unwrap_or_default();
                    write!(out, ",{},{},{},{}", s.mean, s.std, p, s.code()).unwrap();
                }
                None => out.push_str(",,,,"),
            }
        }
        out.push('\n');
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
