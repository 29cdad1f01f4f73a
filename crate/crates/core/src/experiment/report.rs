//! Report emission from run manifests: tables, prediction plots with
//! bootstrap bands, head biases and percentile-bucketed MAPE.
//!
//! Output depends only on the manifests and the options, so rerunning a
//! report produces byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::run::{slug, RunManifest};
use super::Result;
use crate::eval::{
    bootstrap_band, line_chart, percentile_mape, render_csv, render_text, MetricVector, Series, SignificanceEntry,
    TTestKind,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    /// Label of the row every other row is tested against. Defaults to
    /// `AR-RV` when present.
    pub baseline: Option<String>,
    pub ttest: TTestKind,
    pub bootstrap_samples: usize,
    pub seed: u64,
    pub buckets: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { baseline: None, ttest: TTestKind::Student, bootstrap_samples: 1000, seed: 0, buckets: 4 }
    }
}

/// Successful runs of one model.
struct Group<'a> {
    label: &'a str,
    runs: Vec<&'a RunManifest>,
}

impl Group<'_> {
    fn metrics(&self) -> Vec<MetricVector> {
        self.runs.iter().filter_map(|r| r.metrics).collect()
    }

    fn truth(&self) -> Vec<f64> {
        self.runs[0].predictions.iter().map(|p| p.true_rv).collect()
    }

    fn per_run(&self) -> Vec<Vec<f64>> {
        self.runs.iter().map(|r| r.predictions.iter().map(|p| p.pred_rv).collect()).collect()
    }

    fn mean_prediction(&self) -> Vec<f64> {
        let runs = self.per_run();
        (0..runs[0].len())
            .map(|d| runs.iter().map(|r| r[d]).sum::<f64>() / runs.len() as f64)
            .collect()
    }
}

const COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Writes every report file into `out_dir` and returns their paths.
pub fn write_report(manifests: &[RunManifest], out_dir: &Path, opts: &ReportOptions) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut emit = |name: String, body: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };

    emit("runs.csv".into(), runs_csv(manifests))?;

    let mut by_label: BTreeMap<&str, Vec<&RunManifest>> = BTreeMap::new();
    for m in manifests {
        let runs = by_label.entry(m.label.as_str()).or_default();
        if m.succeeded() && !m.predictions.is_empty() {
            runs.push(m);
        }
    }
    let mut groups: Vec<Group<'_>> = by_label
        .into_iter()
        .filter(|(_, runs)| !runs.is_empty())
        .map(|(label, mut runs)| {
            runs.sort_by_key(|r| r.run_index);
            Group { label, runs }
        })
        .collect();
    let baseline = opts
        .baseline
        .clone()
        .or_else(|| groups.iter().any(|g| g.label == "AR-RV").then(|| "AR-RV".to_string()));
    if let Some(b) = &baseline {
        if let Some(pos) = groups.iter().position(|g| g.label == b) {
            let g = groups.remove(pos);
            groups.insert(0, g);
        } else {
            log::warn!("baseline {b:?} has no successful runs; table rows are untested");
        }
    }

    let base_metrics: Option<Vec<MetricVector>> = baseline
        .as_ref()
        .and_then(|b| groups.iter().find(|g| g.label == b))
        .map(Group::metrics);
    let entries: Vec<SignificanceEntry> = groups
        .iter()
        .map(|g| {
            let test = match (&base_metrics, Some(g.label) == baseline.as_deref()) {
                (Some(b), false) => Some((b.as_slice(), opts.ttest)),
                _ => None,
            };
            SignificanceEntry::from_runs(g.label, &g.metrics(), test)
        })
        .collect();
    emit("table.csv".into(), render_csv(&entries))?;
    emit("table.txt".into(), render_text(&entries, 4))?;

    for (k, g) in groups.iter().enumerate() {
        let truth = g.truth();
        let mean = g.mean_prediction();
        let band = if g.runs.len() >= 2 {
            Some(bootstrap_band(&g.per_run(), opts.bootstrap_samples, 0.95, opts.seed)?)
        } else {
            None
        };
        let mut csv = String::from("date,true_rv,pred_rv,lower,upper,runs\n");
        for (d, p) in g.runs[0].predictions.iter().enumerate() {
            let (lo, hi) = band
                .as_ref()
                .map(|b| (b.lower[d].to_string(), b.upper[d].to_string()))
                .unwrap_or_default();
            writeln!(csv, "{},{},{},{},{},{}", p.date, truth[d], mean[d], lo, hi, g.runs.len()).unwrap();
        }
        let name = slug(g.label);
        emit(format!("predictions_{name}.csv"), csv)?;
        let series = [
            Series { name: "true RV", values: &truth, color: "black" },
            Series { name: g.label, values: &mean, color: COLORS[k % COLORS.len()] },
        ];
        let title = format!("{}: predicted vs true RV ({} runs)", g.label, g.runs.len());
        emit(format!("predictions_{name}.svg"), line_chart(&title, &series, band.as_ref()))?;
    }

    let biased: Vec<(&str, Vec<f64>)> = groups
        .iter()
        .filter_map(|g| {
            let biases: Vec<&Vec<f64>> = g.runs.iter().filter_map(|r| r.head_bias.as_ref()).collect();
            let first = biases.first()?;
            let mean = (0..first.len())
                .map(|i| biases.iter().map(|b| b[i]).sum::<f64>() / biases.len() as f64)
                .collect();
            Some((g.label, mean))
        })
        .collect();
    if !biased.is_empty() {
        let mut csv = String::from("slot");
        for (label, _) in &biased {
            write!(csv, ",{}", crate::eval::csv_field(label)).unwrap();
        }
        csv.push('\n');
        for i in 0..biased[0].1.len() {
            let minutes = i * 15;
            write!(csv, "{:02}:{:02}", minutes / 60, minutes % 60).unwrap();
            for (_, b) in &biased {
                write!(csv, ",{}", b[i]).unwrap();
            }
            csv.push('\n');
        }
        emit("head_bias.csv".into(), csv)?;
        let series: Vec<Series<'_>> = biased
            .iter()
            .enumerate()
            .map(|(k, (label, b))| Series { name: label, values: b, color: COLORS[k % COLORS.len()] })
            .collect();
        emit("head_bias.svg".into(), line_chart("Interpolator bias by 15-minute slot (UTC)", &series, None))?;
    }

    if let Some(first) = groups.first() {
        let y = first.truth();
        let dates: Vec<_> = first.runs[0].predictions.iter().map(|p| p.date).collect();
        let models: Vec<(String, Vec<f64>)> = groups
            .iter()
            .filter(|g| {
                let same = g.runs[0].predictions.iter().map(|p| p.date).eq(dates.iter().copied());
                if !same {
                    log::warn!("{} covers different test days; left out of the percentile table", g.label);
                }
                same
            })
            .map(|g| (g.label.to_string(), g.mean_prediction()))
            .collect();
        let buckets = percentile_mape(&y, &models, opts.buckets)?;
        let mut csv = String::from("model,bucket,lower,upper,days,mape\n");
        for b in buckets {
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                crate::eval::csv_field(&b.label),
                b.bucket,
                b.lower,
                b.upper,
                b.days,
                b.mape.map(|m| m.to_string()).unwrap_or_default()
            )
            .unwrap();
        }
        emit("percentile_mape.csv".into(), csv)?;
    }
    Ok(written)
}

fn runs_csv(manifests: &[RunManifest]) -> String {
    let mut sorted: Vec<&RunManifest> = manifests.iter().collect();
    sorted.sort_by(|a, b| (a.label.as_str(), a.run_index).cmp(&(b.label.as_str(), b.run_index)));
    let mut out = String::from("model,run,seed,config_hash,status,mape,mae,rmse,msle,final_loss\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in sorted {
        let status = match &m.failure {
            None => "ok".to_string(),
            Some(e) => crate::eval::csv_field(&format!("failed: {e}")),
        };
        let mv = m.metrics;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            crate::eval::csv_field(&m.label),
            m.run_index,
            m.seed,
            m.config_hash,
            status,
            opt(mv.and_then(|v| v.mape)),
            opt(mv.map(|v| v.mae)),
            opt(mv.map(|v| v.rmse)),
            opt(mv.and_then(|v| v.msle)),
            opt(m.final_loss)
        )
        .unwrap();
    }
    out
}
