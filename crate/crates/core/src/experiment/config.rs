//! Experiment configuration: a `key = value` file, overridable per key.
//!
//! Grammar: one `key = value` pair per line; `#` starts a comment; blank
//! lines are ignored; later assignments win. Keys are listed in [`KEYS`].
//! Model hyperparameters default to the tuned values of the chosen model and
//! are replaced only where set explicitly.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::hpo::SearchSpace;
use super::{ExperimentError, Result};
use crate::eval::TTestKind;
use crate::features::FeatureSet;
use crate::models::{ModelConfig, ModelKind};
use crate::nn::Normalization;

/// Every key the configuration understands.
pub const KEYS: &[&str] = &[
    "data",
    "output",
    "model",
    "feature_set",
    "runs",
    "seed",
    "train_days",
    "validation_days",
    "test_days",
    "width",
    "kernel_size",
    "dilation_base",
    "layers",
    "skip_connections",
    "normalization",
    "dropout",
    "epsilon",
    "learning_rate",
    "weight_decay",
    "epochs",
    "bottleneck",
    "ar_lags",
    "garch_frequency",
    "ttest",
    "bootstrap_samples",
    "subsets",
    "zero_lower",
    "hpo_budget",
    "hpo.width",
    "hpo.dropout",
    "hpo.epsilon",
    "hpo.learning_rate",
    "hpo.weight_decay",
    "hpo.kernel_size",
    "hpo.dilation_base",
];

/// Every forecaster the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Forecaster {
    Deep(ModelKind),
    ArRv,
    Garch,
    ConstantMean,
}

impl Forecaster {
    pub fn is_deterministic(self) -> bool {
        !matches!(self, Forecaster::Deep(_))
    }
}

impl FromStr for Forecaster {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "arrv" => Ok(Forecaster::ArRv),
            "garch" => Ok(Forecaster::Garch),
            "constant" | "constantmean" => Ok(Forecaster::ConstantMean),
            other => other.parse().map(Forecaster::Deep).map_err(|_| format!("unknown model {s:?}")),
        }
    }
}

impl fmt::Display for Forecaster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forecaster::Deep(k) => write!(f, "{k}"),
            Forecaster::ArRv => f.write_str("AR-RV"),
            Forecaster::Garch => f.write_str("GARCH"),
            Forecaster::ConstantMean => f.write_str("Constant mean"),
        }
    }
}

/// Frequency of the returns GARCH is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GarchFrequency {
    /// 15-minute returns, forecast summed over the next 96 bins.
    Bin,
    /// Daily returns, forecast one day ahead.
    Daily,
}

impl FromStr for GarchFrequency {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bin" | "15min" | "intraday" => Ok(GarchFrequency::Bin),
            "daily" | "day" => Ok(GarchFrequency::Daily),
            other => Err(format!("unknown GARCH frequency {other:?}")),
        }
    }
}

/// Fully resolved settings. Their JSON form is what the config hash covers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub data: Option<PathBuf>,
    /// Where results go; left out of the hash.
    #[serde(skip)]
    pub output: PathBuf,
    pub model: Forecaster,
    pub feature_set: Option<String>,
    pub runs: usize,
    pub seed: u64,
    pub train_days: usize,
    pub validation_days: usize,
    pub test_days: usize,
    pub network: ModelConfig,
    pub ar_lags: usize,
    pub garch_frequency: GarchFrequency,
    pub ttest: String,
    pub bootstrap_samples: usize,
    pub subsets: Vec<String>,
    pub zero_lower: bool,
    pub hpo_budget: usize,
    pub space: SearchSpace,
}

impl Settings {
    /// Training horizon: train plus validation days.
    pub fn horizon(&self) -> usize {
        self.train_days + self.validation_days
    }

    pub fn features(&self) -> Result<Option<FeatureSet>> {
        self.feature_set
            .as_deref()
            .map(|s| s.parse().map_err(|e| ExperimentError::Config(format!("feature_set: {e}"))))
            .transpose()
    }

    pub fn ablation_subsets(&self) -> Result<Vec<FeatureSet>> {
        if self.subsets.iter().any(|s| s.eq_ignore_ascii_case("all")) {
            return Ok(FeatureSet::all_subsets());
        }
        self.subsets
            .iter()
            .map(|s| s.parse().map_err(|e| ExperimentError::Config(format!("subset {s:?}: {e}"))))
            .collect()
    }

    pub fn ttest_kind(&self) -> TTestKind {
        if self.ttest == "welch" {
            TTestKind::Welch
        } else {
            TTestKind::Student
        }
    }

    /// Model configuration for a D-TCN over `set`, sharing every other
    /// hyperparameter with the TCN settings.
    pub fn dtcn(&self, set: FeatureSet) -> ModelConfig {
        ModelConfig {
            kind: ModelKind::Dtcn,
            feature_count: set.width(),
            ..self.network.clone()
        }
    }

    /// Hex SHA-256 of the resolved settings.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("settings serialize");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Raw key-value assignments in the order they were made.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, String>,
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(ExperimentError::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e| ExperimentError::Config(format!("{key}: {e}")))
}

impl ExperimentConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ExperimentError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(ExperimentError::Config(format!("unknown key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ExperimentError::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn typed<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.get(key).map(|v| parse(key, v)).unwrap_or(Ok(default))
    }

    /// Validates and resolves every setting.
    pub fn resolve(&self) -> Result<Settings> {
        let model: Forecaster = self.typed("model", Forecaster::Deep(ModelKind::Tcn))?;
        let feature_set = self.get("feature_set").map(str::to_string);
        let kind = match model {
            Forecaster::Deep(k) => k,
            _ => ModelKind::Tcn,
        };
        let mut net = ModelConfig::default_for(kind);
        net.width = self.typed("width", net.width)?;
        net.kernel_size = self.typed("kernel_size", net.kernel_size)?;
        net.dilation_base = self.typed("dilation_base", net.dilation_base)?;
        if let Some(v) = self.get("layers") {
            net.layers = Some(parse("layers", v)?);
        }
        if let Some(v) = self.get("skip_connections") {
            net.skip_connections = parse_bool("skip_connections", v)?;
        }
        net.normalization = self.typed::<Normalization>("normalization", net.normalization)?;
        net.dropout = self.typed("dropout", net.dropout)?;
        net.epsilon = self.typed("epsilon", net.epsilon)?;
        net.learning_rate = self.typed("learning_rate", net.learning_rate)?;
        net.weight_decay = self.typed("weight_decay", net.weight_decay)?;
        net.epochs = self.typed("epochs", net.epochs)?;
        net.bottleneck = self.typed("bottleneck", net.bottleneck)?;
        if kind == ModelKind::Dtcn {
            let set: FeatureSet = feature_set
                .as_deref()
                .ok_or_else(|| ExperimentError::Config("D-TCN needs feature_set".into()))?
                .parse()
                .map_err(|e| ExperimentError::Config(format!("feature_set: {e}")))?;
            net.feature_count = set.width();
        }
        net.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;

        let ttest = self.get("ttest").unwrap_or("student").to_ascii_lowercase();
        if ttest != "student" && ttest != "welch" {
            return Err(ExperimentError::Config(format!("ttest: expected student or welch, got {ttest:?}")));
        }
        let zero_lower = self.get("zero_lower").map(|v| parse_bool("zero_lower", v)).transpose()?.unwrap_or(false);
        let subsets = self
            .get("subsets")
            .map(|s| s.split(';').map(|p| p.trim().to_string()).collect())
            .unwrap_or_else(|| vec!["all".to_string()]);

        let mut space = SearchSpace::for_kind(kind);
        for (key, slot) in [
            ("hpo.dropout", &mut space.dropout),
            ("hpo.epsilon", &mut space.epsilon),
            ("hpo.learning_rate", &mut space.learning_rate),
            ("hpo.weight_decay", &mut space.weight_decay),
        ] {
            if let Some(v) = self.get(key) {
                *slot = parse_range(key, v)?;
            }
        }
        for (key, slot) in [
            ("hpo.width", &mut space.width),
            ("hpo.kernel_size", &mut space.kernel_size),
            ("hpo.dilation_base", &mut space.dilation_base),
        ] {
            if let Some(v) = self.get(key) {
                *slot = parse_range(key, v)?;
            }
        }
        space.validate()?;

        let s = Settings {
            data: self.get("data").map(PathBuf::from),
            output: PathBuf::from(self.get("output").unwrap_or("out")),
            model,
            feature_set,
            runs: self.typed("runs", 20)?,
            seed: self.typed("seed", 0)?,
            train_days: self.typed("train_days", 72)?,
            validation_days: self.typed("validation_days", 24)?,
            test_days: self.typed("test_days", 48)?,
            network: net,
            ar_lags: self.typed("ar_lags", 1)?,
            garch_frequency: self.typed("garch_frequency", GarchFrequency::Bin)?,
            ttest,
            bootstrap_samples: self.typed("bootstrap_samples", 1000)?,
            subsets,
            zero_lower,
            hpo_budget: self.typed("hpo_budget", 250)?,
            space,
        };
        if s.runs == 0 {
            return Err(ExperimentError::Config("runs must be at least 1".into()));
        }
        if s.train_days < 2 || s.test_days == 0 {
            return Err(ExperimentError::Config("need at least 2 training days and 1 test day".into()));
        }
        if s.ar_lags == 0 {
            return Err(ExperimentError::Config("ar_lags must be at least 1".into()));
        }
        if s.hpo_budget == 0 {
            return Err(ExperimentError::Config("hpo_budget must be at least 1".into()));
        }
        Ok(s)
    }
}

/// `lo..hi` (or a single value for a fixed parameter).
fn parse_range<T: FromStr + Copy>(key: &str, v: &str) -> Result<(T, T)>
where
    T::Err: fmt::Display,
{
    match v.split_once("..") {
        Some((a, b)) => Ok((parse(key, a.trim())?, parse(key, b.trim())?)),
        None => {
            let x = parse(key, v)?;
            Ok((x, x))
        }
    }
}
