//! Repeated seeded runs, deterministic baselines and the ablation matrix.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Forecaster, GarchFrequency, Settings};
use super::{ExperimentError, Result};
use crate::econ::{ArRv, EconError, Garch};
use crate::eval::{metrics, render_csv, render_text, MetricVector, SignificanceEntry, TTestKind};
use crate::features::{read_feature_csv, DayData, FeatureSet, Split};
use crate::models::{predict_rv, ConstantMean, DayWindow, DeepForecaster, ModelConfig};
use crate::BINS_PER_DAY;

/// One test-day forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub date: NaiveDate,
    pub true_rv: f64,
    pub pred_rv: f64,
}

/// Everything one run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub run_index: usize,
    /// `None` for a successful run, otherwise why it failed.
    pub failure: Option<String>,
    pub metrics: Option<MetricVector>,
    pub predictions: Vec<Prediction>,
    /// Interpolator biases for deep models.
    pub head_bias: Option<Vec<f64>>,
    pub final_loss: Option<f64>,
    /// Files written for this run, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    fn failed(label: &str, hash: &str, seed: u64, run_index: usize, why: String) -> Self {
        log::warn!("{label} run {run_index} (seed {seed}) failed: {why}");
        RunManifest {
            label: label.to_string(),
            config_hash: hash.to_string(),
            seed,
            run_index,
            failure: Some(why),
            metrics: None,
            predictions: Vec::new(),
            head_bias: None,
            final_loss: None,
            artifacts: Vec::new(),
        }
    }

    /// `<label>_runNN.json`, with the label reduced to file-safe characters.
    pub fn file_name(&self) -> String {
        format!("{}_run{:02}.json", slug(&self.label), self.run_index)
    }
}

/// Lower-case label with every run of other characters replaced by `_`.
pub fn slug(label: &str) -> String {
    let mut out = String::new();
    for c in label.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

pub fn load_days(settings: &Settings) -> Result<Vec<DayData>> {
    let path = settings
        .data
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("no data file given (set data = features.csv)".into()))?;
    if !path.is_file() {
        return Err(ExperimentError::Config(format!("data file {} does not exist", path.display())));
    }
    Ok(read_feature_csv(path)?)
}

fn predictions(test: &[DayWindow], preds: &[f64]) -> Vec<Prediction> {
    test.iter()
        .zip(preds)
        .map(|(w, &p)| Prediction { date: w.target_day, true_rv: predict_rv(&w.target_raw), pred_rv: p })
        .collect()
}

fn score(preds: &[Prediction]) -> Result<MetricVector> {
    let y: Vec<f64> = preds.iter().map(|p| p.true_rv).collect();
    let yh: Vec<f64> = preds.iter().map(|p| p.pred_rv).collect();
    Ok(metrics(&y, &yh)?)
}

/// Test-set metrics of one trained deep model.
pub(crate) fn deep_run_metrics(config: &ModelConfig, seed: u64, split: &Split) -> Result<MetricVector> {
    let mut m = DeepForecaster::new(config.clone(), seed)?;
    m.fit(&split.train)?;
    let ev = m.evaluate(&split.test, &split.scaling.returns)?;
    let (y, p): (Vec<f64>, Vec<f64>) = ev.into_iter().unzip();
    Ok(metrics(&y, &p)?)
}

/// Trains and evaluates one deep model; returns the manifest and, on
/// success, the trained model.
pub fn deep_run(
    label: &str,
    config: &ModelConfig,
    split: &Split,
    hash: &str,
    seed: u64,
    run_index: usize,
) -> (RunManifest, Option<DeepForecaster>) {
    let attempt = || -> Result<(RunManifest, DeepForecaster)> {
        let mut model = DeepForecaster::new(config.clone(), seed)?;
        let report = model.fit(&split.train)?;
        let manifest = evaluate_deep(label, &model, split, hash, run_index, report.final_loss())?;
        Ok((manifest, model))
    };
    match attempt() {
        Ok((m, model)) => (m, Some(model)),
        Err(e) => (RunManifest::failed(label, hash, seed, run_index, e.to_string()), None),
    }
}

/// Manifest for an already-trained model.
pub fn evaluate_deep(
    label: &str,
    model: &DeepForecaster,
    split: &Split,
    hash: &str,
    run_index: usize,
    final_loss: Option<f64>,
) -> Result<RunManifest> {
    let ev = model.evaluate(&split.test, &split.scaling.returns)?;
    let preds: Vec<f64> = ev.iter().map(|&(_, p)| p).collect();
    let predictions = predictions(&split.test, &preds);
    let metrics = score(&predictions)?;
    Ok(RunManifest {
        label: label.to_string(),
        config_hash: hash.to_string(),
        seed: model.seed,
        run_index,
        failure: None,
        metrics: Some(metrics),
        predictions,
        head_bias: Some(model.export_head_bias().into_iter().map(|(_, b)| b).collect()),
        final_loss,
        artifacts: Vec::new(),
    })
}

/// Daily RV forecasts of a deterministic baseline for every test window.
pub fn baseline_forecasts(model: Forecaster, split: &Split, ar_lags: usize, garch: GarchFrequency) -> Result<Vec<f64>> {
    let days = &split.days;
    let index_of = |d: NaiveDate| days.iter().position(|x| x.date == d).expect("window day in split");
    let train = split.train_part();
    match model {
        Forecaster::ConstantMean => {
            let rv: Vec<f64> = train.iter().map(DayData::rv).collect();
            Ok(vec![ConstantMean::fit(&rv).predict(); split.test.len()])
        }
        Forecaster::ArRv => {
            let rv: Vec<f64> = days.iter().map(DayData::rv).collect();
            let fit = ArRv::fit(&rv[..split.train_days], ar_lags)?;
            split
                .test
                .iter()
                .map(|w| {
                    let t = index_of(w.target_day);
                    if t < ar_lags {
                        return Err(ExperimentError::Config(format!("{} lags before {}", ar_lags, w.target_day)));
                    }
                    Ok(fit.predict(&rv[t - ar_lags..t])?)
                })
                .collect()
        }
        Forecaster::Garch => {
            let series: Vec<f64> = match garch {
                GarchFrequency::Bin => days.iter().flat_map(|d| d.returns.iter().copied()).collect(),
                GarchFrequency::Daily => days.iter().map(|d| d.returns.iter().sum()).collect(),
            };
            let per_day = if garch == GarchFrequency::Bin { BINS_PER_DAY } else { 1 };
            let fit = match Garch::fit(&series[..split.train_days * per_day]) {
                Ok(g) => g,
                Err(EconError::NotConverged { iterations, best }) => {
                    log::warn!("GARCH did not converge in {iterations} iterations; using the best point");
                    *best
                }
                Err(e) => return Err(e.into()),
            };
            Ok(split
                .test
                .iter()
                .map(|w| {
                    let t = index_of(w.target_day);
                    fit.forecast_rv(fit.state_after(&series[..t * per_day]), per_day)
                })
                .collect())
        }
        Forecaster::Deep(k) => Err(ExperimentError::Config(format!("{k} is not a deterministic baseline"))),
    }
}

fn deterministic_run(settings: &Settings, split: &Split, hash: &str) -> RunManifest {
    let label = settings.model.to_string();
    let attempt = || -> Result<RunManifest> {
        let preds = baseline_forecasts(settings.model, split, settings.ar_lags, settings.garch_frequency)?;
        let predictions = predictions(&split.test, &preds);
        let metrics = score(&predictions)?;
        Ok(RunManifest {
            label: label.clone(),
            config_hash: hash.to_string(),
            seed: settings.seed,
            run_index: 0,
            failure: None,
            metrics: Some(metrics),
            predictions,
            head_bias: None,
            final_loss: None,
            artifacts: Vec::new(),
        })
    };
    attempt().unwrap_or_else(|e| RunManifest::failed(&label, hash, settings.seed, 0, e.to_string()))
}

/// Training horizon followed by the test horizon.
pub fn test_split(settings: &Settings, days: &[DayData], set: Option<FeatureSet>) -> Result<Split> {
    Ok(Split::new(days, settings.horizon(), settings.test_days, set)?)
}

/// Label used in tables: the model name, with `_<groups>` for D-TCNs.
pub fn deep_label(config: &ModelConfig, set: Option<FeatureSet>) -> String {
    match set {
        Some(s) => format!("{}_{}", config.kind, s.label()),
        None => config.kind.to_string(),
    }
}

/// `settings.runs` runs with seeds `seed + i` (one run for deterministic
/// baselines). Failed runs are kept, with the failure recorded.
pub fn train(settings: &Settings, days: &[DayData]) -> Result<Vec<RunManifest>> {
    let hash = settings.hash();
    match settings.model {
        Forecaster::Deep(_) => {
            let set = settings.features()?;
            let split = test_split(settings, days, set)?;
            let label = deep_label(&settings.network, set);
            Ok((0..settings.runs)
                .into_par_iter()
                .map(|i| deep_run(&label, &settings.network, &split, &hash, settings.seed + i as u64, i).0)
                .collect())
        }
        _ => {
            let split = test_split(settings, days, None)?;
            Ok(vec![deterministic_run(settings, &split, &hash)])
        }
    }
}

/// Runs, per-row summaries and the rendered table of an ablation.
#[derive(Debug, Clone)]
pub struct Ablation {
    pub manifests: Vec<RunManifest>,
    pub entries: Vec<SignificanceEntry>,
}

impl Ablation {
    pub fn table_text(&self) -> String {
        render_text(&self.entries, 2)
    }

    pub fn table_csv(&self) -> String {
        render_csv(&self.entries)
    }
}

fn successful_metrics(runs: &[RunManifest]) -> Vec<MetricVector> {
    runs.iter().filter_map(|m| m.metrics).collect()
}

/// TCN baseline runs, then one D-TCN row per subset tested against the
/// baseline with a one-sided Welch test.
///
/// With `settings.zero_lower`, each D-TCN is the matching trained TCN with an
/// all-zero lower pipeline and is not trained further; its rows must then
/// equal the baseline exactly.
pub fn ablate(settings: &Settings, days: &[DayData], subsets: &[FeatureSet]) -> Result<Ablation> {
    if subsets.is_empty() {
        return Err(ExperimentError::Config("ablation needs at least one feature subset".into()));
    }
    let hash = settings.hash();
    let tcn = ModelConfig { kind: crate::models::ModelKind::Tcn, feature_count: 0, ..settings.network.clone() };
    let base_split = test_split(settings, days, None)?;
    let base_label = deep_label(&tcn, None);
    let base: Vec<(RunManifest, Option<DeepForecaster>)> = (0..settings.runs)
        .into_par_iter()
        .map(|i| deep_run(&base_label, &tcn, &base_split, &hash, settings.seed + i as u64, i))
        .collect();
    let base_runs: Vec<RunManifest> = base.iter().map(|(m, _)| m.clone()).collect();
    let base_metrics = successful_metrics(&base_runs);
    let mut entries = vec![SignificanceEntry::from_runs(&base_label, &base_metrics, None)];
    let mut manifests = base_runs.clone();

    for &set in subsets {
        let split = test_split(settings, days, Some(set))?;
        let config = settings.dtcn(set);
        let label = deep_label(&config, Some(set));
        let runs: Vec<RunManifest> = if settings.zero_lower {
            base.par_iter()
                .enumerate()
                .map(|(i, (m, model))| match model {
                    Some(tcn) => DeepForecaster::dtcn_from_tcn(tcn, set.width())
                        .map_err(ExperimentError::from)
                        .and_then(|d| evaluate_deep(&label, &d, &split, &hash, i, m.final_loss))
                        .unwrap_or_else(|e| RunManifest::failed(&label, &hash, m.seed, i, e.to_string())),
                    None => RunManifest::failed(&label, &hash, m.seed, i, "baseline run failed".into()),
                })
                .collect()
        } else {
            (0..settings.runs)
                .into_par_iter()
                .map(|i| deep_run(&label, &config, &split, &hash, settings.seed + i as u64, i).0)
                .collect()
        };
        let m = successful_metrics(&runs);
        entries.push(SignificanceEntry::from_runs(&label, &m, Some((&base_metrics, TTestKind::Welch))));
        manifests.extend(runs);
    }
    Ok(Ablation { manifests, entries })
}

/// Writes each manifest as pretty JSON under `dir`, recording the file name
/// among its artifacts, and returns the paths.
pub fn write_manifests(dir: &Path, manifests: &mut [RunManifest]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    manifests
        .iter_mut()
        .map(|m| {
            let name = m.file_name();
            if !m.artifacts.contains(&name) {
                m.artifacts.push(name.clone());
            }
            let path = dir.join(name);
            std::fs::write(&path, serde_json::to_string_pretty(m)? + "\n")?;
            Ok(path)
        })
        .collect()
}

/// Reads every `*.json` manifest in `dir`, ordered by file name.
pub fn read_manifests(dir: &Path) -> Result<Vec<RunManifest>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "json"));
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", p.display())))
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::experiment::config::ExperimentConfig;
    use crate::synth::SynthConfig;

    pub(crate) fn tiny_settings(extra: &str) -> Settings {
        let text = format!(
            "train_days = 6\nvalidation_days = 2\ntest_days = 3\nruns = 2\nwidth = 4\nepochs = 2\nbottleneck = 2\nlearning_rate = 0.001\n{extra}"
        );
        ExperimentConfig::parse_str(&text).unwrap().resolve().unwrap()
    }

    pub(crate) fn tiny_days() -> Vec<DayData> {
        SynthConfig { days: 12, tweets_per_bin: 1.0, ..SynthConfig::default() }.generate().days().unwrap()
    }

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("D-TCN_Count, VADER"), "d_tcn_count_vader");
        assert_eq!(slug("AR-RV"), "ar_rv");
    }

    #[test]
    fn deterministic_models_run_once() {
        let days = tiny_days();
        for model in ["arrv", "garch", "constant"] {
            let s = tiny_settings(&format!("model = {model}\nruns = 5"));
            let runs = train(&s, &days).unwrap();
            assert_eq!(runs.len(), 1, "{model}");
            assert!(runs[0].succeeded(), "{model}: {:?}", runs[0].failure);
            assert_eq!(runs[0].predictions.len(), 3);
        }
    }

    #[test]
    fn reruns_are_identical() {
        let days = tiny_days();
        let s = tiny_settings("runs = 1\nseed = 9");
        let a = train(&s, &days).unwrap();
        let b = train(&s, &days).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].seed, 9);
    }

    #[test]
    fn failures_are_recorded() {
        let days = tiny_days();
        // A huge learning rate overflows the loss.
        let s = tiny_settings("learning_rate = 1e300\nepsilon = 0");
        let runs = train(&s, &days).unwrap();
        assert_eq!(runs.len(), 2);
        assert!(runs.iter().all(|r| !r.succeeded() && r.metrics.is_none()));
    }

    #[test]
    fn zero_lower_ablation_matches_baseline() {
        let days = tiny_days();
        let s = tiny_settings("zero_lower = true");
        let subsets = FeatureSet::all_subsets();
        let a = ablate(&s, &days, &subsets).unwrap();
        assert_eq!(a.entries.len(), 16);
        let n = s.runs;
        for k in 0..15 {
            for i in 0..n {
                let base = &a.manifests[i];
                let d = &a.manifests[n * (k + 1) + i];
                assert_eq!(base.predictions, d.predictions);
            }
        }
    }

    #[test]
    fn manifests_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let days = tiny_days();
        let mut runs = train(&tiny_settings("model = arrv"), &days).unwrap();
        write_manifests(dir.path(), &mut runs).unwrap();
        assert_eq!(runs[0].artifacts, vec!["ar_rv_run00.json".to_string()]);
        assert_eq!(read_manifests(dir.path()).unwrap(), runs);
    }
}
