//! Deep forecasters: TCN, D-TCN, LSTM and GRU, each feeding the same
//! bottleneck-interpolator head that emits one prediction per 15-minute slot.

use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::ColumnScale;
use crate::nn::{
    self, AdamW, Bound, CellKind, Dense, Mode, NnError, Normalization, ParamSet, RecurrentCell,
    TcnBlock, TcnConfig,
};
use crate::tensor::{Graph, Tensor, TensorError, Var};
use crate::BINS_PER_DAY;

/// Scaled inputs never exceed this magnitude; larger values mean the scaler was skipped.
pub const MAX_SCALED_MAGNITUDE: f64 = 100.0;

/// Width of the lower D-TCN pipeline after its dense layer.
pub const LOWER_DIM: usize = 4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("input value {value} at {location} looks unscaled (|x| > {MAX_SCALED_MAGNITUDE})")]
    UnscaledInput { value: f64, location: String },
    #[error("window has {0} bins, expected 96")]
    WindowLength(usize),
    #[error("D-TCN window is missing its feature matrix")]
    MissingFeatures,
    #[error("feature matrix has shape {actual:?}, expected [96, {expected}]")]
    FeatureShape { expected: usize, actual: Vec<usize> },
    #[error("non-finite loss {loss} at epoch {epoch}, window {window} ({day})")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        window: usize,
        day: NaiveDate,
    },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("checkpoint metadata: {0}")]
    Metadata(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tcn,
    Dtcn,
    Lstm,
    Gru,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "tcn" => Ok(ModelKind::Tcn),
            "dtcn" => Ok(ModelKind::Dtcn),
            "lstm" => Ok(ModelKind::Lstm),
            "gru" => Ok(ModelKind::Gru),
            other => Err(format!("unknown deep model {other:?}")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Tcn => "TCN",
            ModelKind::Dtcn => "D-TCN",
            ModelKind::Lstm => "LSTM",
            ModelKind::Gru => "GRU",
        })
    }
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Filter count for TCNs, hidden size for recurrent cells.
    pub width: usize,
    pub kernel_size: usize,
    pub dilation_base: usize,
    pub layers: Option<usize>,
    pub skip_connections: bool,
    pub normalization: Normalization,
    pub dropout: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub bottleneck: usize,
    /// Columns of the tweet feature matrix (D-TCN only).
    pub feature_count: usize,
}

impl ModelConfig {
    pub fn tcn() -> Self {
        ModelConfig {
            kind: ModelKind::Tcn,
            width: 287,
            kernel_size: 5,
            dilation_base: 4,
            layers: None,
            skip_connections: true,
            normalization: Normalization::None,
            dropout: 0.217,
            epsilon: 0.0913,
            learning_rate: 6.49e-5,
            weight_decay: 5.93e-6,
            epochs: 30,
            bottleneck: 8,
            feature_count: 0,
        }
    }

    pub fn dtcn(feature_count: usize) -> Self {
        ModelConfig {
            kind: ModelKind::Dtcn,
            feature_count,
            ..Self::tcn()
        }
    }

    pub fn lstm() -> Self {
        ModelConfig {
            kind: ModelKind::Lstm,
            width: 261,
            dropout: 0.0237,
            epsilon: 0.0364,
            learning_rate: 0.00521,
            weight_decay: 9.25e-7,
            ..Self::tcn()
        }
    }

    pub fn gru() -> Self {
        ModelConfig {
            kind: ModelKind::Gru,
            width: 43,
            dropout: 0.0544,
            epsilon: 0.0431,
            learning_rate: 0.00973,
            weight_decay: 1.59e-8,
            ..Self::tcn()
        }
    }

    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Tcn => Self::tcn(),
            ModelKind::Dtcn => Self::dtcn(1),
            ModelKind::Lstm => Self::lstm(),
            ModelKind::Gru => Self::gru(),
        }
    }

    fn tcn_config(&self, in_channels: usize) -> TcnConfig {
        TcnConfig {
            in_channels,
            filters: self.width,
            kernel_size: self.kernel_size,
            dilation_base: self.dilation_base,
            layers: self.layers,
            skip_connections: self.skip_connections,
            normalization: self.normalization,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.bottleneck == 0 {
            return Err(ModelError::Config("width and bottleneck must be positive".into()));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(ModelError::Config(format!("epsilon {} is negative", self.epsilon)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(ModelError::Config(format!("weight decay {}", self.weight_decay)));
        }
        if self.kind == ModelKind::Dtcn && self.feature_count == 0 {
            return Err(ModelError::Config("D-TCN needs at least one feature column".into()));
        }
        Ok(())
    }
}

/// One training or test example: the previous day's bins as input, the next
/// day's 96 log-returns as target.
#[derive(Debug, Clone, PartialEq)]
pub struct DayWindow {
    pub input_day: NaiveDate,
    pub target_day: NaiveDate,
    /// Scaled log-returns of `input_day`.
    pub inputs: Vec<f64>,
    /// Scaled tweet features of `input_day`, `[96 × F]`.
    pub features: Option<Tensor>,
    /// Scaled log-returns of `target_day`.
    pub target: Vec<f64>,
    /// Raw log-returns of `target_day`.
    pub target_raw: Vec<f64>,
}

impl DayWindow {
    /// Start of every input bin, in seconds since the epoch.
    pub fn input_timestamps(&self) -> Vec<i64> {
        day_bin_starts(self.input_day)
    }

    pub fn target_timestamps(&self) -> Vec<i64> {
        day_bin_starts(self.target_day)
    }
}

fn day_bin_starts(day: NaiveDate) -> Vec<i64> {
    let start = day.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp();
    (0..BINS_PER_DAY as i64).map(|i| start + i * 900).collect()
}

/// Square root of the summed squared log-returns.
pub fn predict_rv(returns: &[f64]) -> f64 {
    returns.iter().map(|r| r * r).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
struct ForecastHead {
    bottleneck: Dense,
    interpolator: Dense,
}

impl ForecastHead {
    fn new(ps: &mut ParamSet, inputs: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        ForecastHead {
            bottleneck: Dense::new(ps, "head.bottleneck", inputs, width, rng),
            interpolator: Dense::new(ps, "head.interpolator", width, BINS_PER_DAY, rng),
        }
    }

    fn forward<'g>(&self, g: &'g Graph, p: &Bound<'g>, z: Var<'g>) -> Result<Var<'g>> {
        let b = self.bottleneck.forward(g, p, z)?;
        Ok(self.interpolator.forward(g, p, b)?)
    }
}

#[derive(Debug, Clone)]
enum Body {
    Tcn(TcnBlock),
    Dtcn {
        upper: TcnBlock,
        lower_dense: Dense,
        lower: TcnBlock,
    },
    Recurrent(RecurrentCell),
}

/// Per-purpose random streams derived from one run seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Upper = 1,
    Lower = 2,
    Head = 3,
    Dropout = 4,
    Shuffle = 5,
}

fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Per-epoch summary of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub epoch_losses: Vec<f64>,
}

impl FitReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// A deep forecaster together with its parameters.
#[derive(Debug, Clone)]
pub struct DeepForecaster {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub seed: u64,
    body: Body,
    head: ForecastHead,
}

impl DeepForecaster {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut upper_rng = stream(seed, Stream::Upper);
        let (body, rep) = match config.kind {
            ModelKind::Tcn => {
                let t = TcnBlock::new(&mut params, "upper", config.tcn_config(1), &mut upper_rng)?;
                (Body::Tcn(t), config.width)
            }
            ModelKind::Dtcn => {
                let upper = TcnBlock::new(&mut params, "upper", config.tcn_config(1), &mut upper_rng)?;
                let mut lower_rng = stream(seed, Stream::Lower);
                let lower_dense =
                    Dense::new(&mut params, "lower.dense", config.feature_count, LOWER_DIM, &mut lower_rng);
                let lower = TcnBlock::new(
                    &mut params,
                    "lower",
                    config.tcn_config(LOWER_DIM),
                    &mut lower_rng,
                )?;
                (
                    Body::Dtcn {
                        upper,
                        lower_dense,
                        lower,
                    },
                    2 * config.width,
                )
            }
            ModelKind::Lstm | ModelKind::Gru => {
                let kind = if config.kind == ModelKind::Lstm {
                    CellKind::Lstm
                } else {
                    CellKind::Gru
                };
                let cell = RecurrentCell::new(
                    &mut params,
                    "rnn",
                    kind,
                    1,
                    config.width,
                    config.dropout,
                    &mut upper_rng,
                )?;
                (Body::Recurrent(cell), config.width)
            }
        };
        let head = ForecastHead::new(&mut params, rep, config.bottleneck, &mut stream(seed, Stream::Head));
        Ok(DeepForecaster {
            config,
            params,
            seed,
            body,
            head,
        })
    }

    /// D-TCN whose upper pipeline and head reproduce `tcn` exactly and whose
    /// lower pipeline is all zeros.
    pub fn dtcn_from_tcn(tcn: &DeepForecaster, feature_count: usize) -> Result<Self> {
        if tcn.config.kind != ModelKind::Tcn {
            return Err(ModelError::Config("source model must be a TCN".into()));
        }
        let config = ModelConfig {
            kind: ModelKind::Dtcn,
            feature_count,
            ..tcn.config.clone()
        };
        let mut d = DeepForecaster::new(config, tcn.seed)?;
        let width = tcn.config.width;
        let names: Vec<String> = d.params.names().to_vec();
        for name in names {
            let id = d.params.find(&name).expect("own name");
            if name.starts_with("lower.") {
                let shape = d.params.get(id).shape().to_vec();
                *d.params.get_mut(id) = Tensor::zeros(&shape);
            } else if name == "head.bottleneck.weight" {
                let src = tcn.params.get(tcn.params.find(&name).expect("head")).clone();
                let rows = src.rows();
                let mut data = Vec::with_capacity(rows * 2 * width);
                for r in 0..rows {
                    data.extend_from_slice(src.row(r));
                    data.extend(std::iter::repeat_n(0.0, width));
                }
                *d.params.get_mut(id) = Tensor::matrix(rows, 2 * width, data)?;
            } else {
                let src = tcn.params.find(&name).ok_or_else(|| {
                    ModelError::Config(format!("TCN has no parameter {name}"))
                })?;
                *d.params.get_mut(id) = tcn.params.get(src).clone();
            }
        }
        Ok(d)
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    fn check_window(&self, w: &DayWindow) -> Result<()> {
        if w.inputs.len() != BINS_PER_DAY {
            return Err(ModelError::WindowLength(w.inputs.len()));
        }
        if let Some((i, &v)) = w.inputs.iter().enumerate().find(|(_, v)| v.abs() > MAX_SCALED_MAGNITUDE) {
            return Err(ModelError::UnscaledInput {
                value: v,
                location: format!("return bin {i} of {}", w.input_day),
            });
        }
        if self.config.kind == ModelKind::Dtcn {
            let f = w.features.as_ref().ok_or(ModelError::MissingFeatures)?;
            if f.shape() != [BINS_PER_DAY, self.config.feature_count] {
                return Err(ModelError::FeatureShape {
                    expected: self.config.feature_count,
                    actual: f.shape().to_vec(),
                });
            }
            if let Some((i, &v)) = f.data().iter().enumerate().find(|(_, v)| v.abs() > MAX_SCALED_MAGNITUDE) {
                return Err(ModelError::UnscaledInput {
                    value: v,
                    location: format!(
                        "feature bin {}, column {} of {}",
                        i / self.config.feature_count,
                        i % self.config.feature_count,
                        w.input_day
                    ),
                });
            }
        }
        Ok(())
    }

    /// Final-timestep representation fed to the head.
    fn representation<'g>(
        &self,
        g: &'g Graph,
        p: &Bound<'g>,
        w: &DayWindow,
        mode: &mut Mode<'_>,
    ) -> Result<Var<'g>> {
        let x = g.constant(Tensor::matrix(BINS_PER_DAY, 1, w.inputs.clone())?);
        let last = BINS_PER_DAY - 1;
        match &self.body {
            Body::Tcn(t) => Ok(g.row(t.forward(g, p, x, mode)?, last)?),
            Body::Dtcn {
                upper,
                lower_dense,
                lower,
            } => {
                let up = g.row(upper.forward(g, p, x, mode)?, last)?;
                let f = g.constant(w.features.clone().ok_or(ModelError::MissingFeatures)?);
                let reduced = g.relu(lower_dense.forward(g, p, f)?);
                let low = g.row(lower.forward(g, p, reduced, mode)?, last)?;
                Ok(g.concat(&[up, low])?)
            }
            Body::Recurrent(cell) => Ok(g.row(cell.forward(g, p, x, mode)?, last)?),
        }
    }

    fn forward_graph<'g>(
        &self,
        g: &'g Graph,
        p: &Bound<'g>,
        w: &DayWindow,
        mode: &mut Mode<'_>,
    ) -> Result<Var<'g>> {
        self.check_window(w)?;
        let z = self.representation(g, p, w, mode)?;
        self.head.forward(g, p, z)
    }

    /// 96 predictions in scaled log-return space, with dropout disabled.
    pub fn forward_day(&self, w: &DayWindow) -> Result<Vec<f64>> {
        let g = Graph::new();
        let p = self.params.bind(&g);
        Ok(self.forward_graph(&g, &p, w, &mut Mode::Eval)?.to_tensor().into_data())
    }

    /// Training loss on one window and its gradient for every parameter,
    /// with dropout disabled.
    pub fn loss_and_gradients(&self, w: &DayWindow) -> Result<(f64, Vec<Tensor>)> {
        let g = Graph::new();
        let p = self.params.bind(&g);
        let pred = self.forward_graph(&g, &p, w, &mut Mode::Eval)?;
        let target = g.constant(Tensor::vector(w.target.clone()));
        let loss = nn::epsilon_insensitive_loss(&g, target, pred, self.config.epsilon)?;
        let value = loss.value().data()[0];
        g.backward(loss)?;
        Ok((value, p.grads()))
    }

    /// Upper-pipeline activations for every bin (TCN and D-TCN only).
    pub fn upper_activations(&self, w: &DayWindow) -> Result<Option<Tensor>> {
        let upper = match &self.body {
            Body::Tcn(t) => t,
            Body::Dtcn { upper, .. } => upper,
            Body::Recurrent(_) => return Ok(None),
        };
        let g = Graph::new();
        let p = self.params.bind(&g);
        let x = g.constant(Tensor::matrix(BINS_PER_DAY, 1, w.inputs.clone())?);
        Ok(Some(upper.forward(&g, &p, x, &mut Mode::Eval)?.to_tensor()))
    }

    /// Trains with AdamW on the epsilon-insensitive loss, one window per step,
    /// visiting the windows in a fresh random order each epoch.
    pub fn fit(&mut self, train: &[DayWindow]) -> Result<FitReport> {
        for w in train {
            self.check_window(w)?;
        }
        let mut opt = AdamW::new(&self.params, self.config.learning_rate, self.config.weight_decay);
        let mut shuffle = stream(self.seed, Stream::Shuffle);
        let mut drop_rng = stream(self.seed, Stream::Dropout);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut epoch_losses = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut shuffle);
            let mut total = 0.0;
            for &i in &order {
                let w = &train[i];
                let g = Graph::new();
                let p = self.params.bind(&g);
                let pred = self.forward_graph(&g, &p, w, &mut Mode::Train(&mut drop_rng))?;
                let target = g.constant(Tensor::vector(w.target.clone()));
                let loss = nn::epsilon_insensitive_loss(&g, target, pred, self.config.epsilon)?;
                let value = loss.value().data()[0];
                if !value.is_finite() {
                    return Err(ModelError::NonFiniteLoss {
                        loss: value,
                        epoch,
                        window: i,
                        day: w.target_day,
                    });
                }
                total += value;
                g.backward(loss)?;
                opt.step(&mut self.params, &p.grads())?;
            }
            let mean = if train.is_empty() { 0.0 } else { total / train.len() as f64 };
            log::debug!("{} seed {} epoch {epoch}: loss {mean:.6}", self.config.kind, self.seed);
            epoch_losses.push(mean);
        }
        Ok(FitReport { epoch_losses })
    }

    /// Raw-space 96-bin prediction for one window.
    pub fn predict_returns(&self, w: &DayWindow, scale: &ColumnScale) -> Result<Vec<f64>> {
        Ok(self
            .forward_day(w)?
            .into_iter()
            .map(|s| scale.invert(s))
            .collect())
    }

    /// `(true RV, predicted RV)` for every test window.
    pub fn evaluate(&self, test: &[DayWindow], scale: &ColumnScale) -> Result<Vec<(f64, f64)>> {
        test.iter()
            .map(|w| {
                let pred = self.predict_returns(w, scale)?;
                Ok((predict_rv(&w.target_raw), predict_rv(&pred)))
            })
            .collect()
    }

    /// The interpolator's 96 biases, keyed by slot start time (UTC).
    pub fn export_head_bias(&self) -> Vec<(String, f64)> {
        let bias = self.params.get(self.head.interpolator.b);
        bias.data()
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let minutes = i * 15;
                (format!("{:02}:{:02}", minutes / 60, minutes % 60), b)
            })
            .collect()
    }

    /// Zeroes both head layers' weights.
    pub fn zero_head_weights(&mut self) {
        for id in [self.head.bottleneck.w, self.head.interpolator.w] {
            let shape = self.params.get(id).shape().to_vec();
            *self.params.get_mut(id) = Tensor::zeros(&shape);
        }
    }

    pub fn set_head_bias(&mut self, bias: Vec<f64>) -> Result<()> {
        if bias.len() != BINS_PER_DAY {
            return Err(ModelError::WindowLength(bias.len()));
        }
        *self.params.get_mut(self.head.interpolator.b) = Tensor::vector(bias);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_string(&Checkpoint {
            config: self.config.clone(),
            seed: self.seed,
        })?;
        nn::save_checkpoint(path, &self.params, &meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, params) = nn::load_checkpoint(path)?;
        let meta: Checkpoint = serde_json::from_str(&meta)?;
        let mut model = DeepForecaster::new(meta.config, meta.seed)?;
        if params.names() != model.params.names() {
            return Err(ModelError::Config("checkpoint parameter names do not match".into()));
        }
        model.params.assign(params.values().to_vec())?;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: ModelConfig,
    seed: u64,
}

/// Mean training-set RV, predicted for every day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantMean {
    pub level: f64,
}

impl ConstantMean {
    pub fn fit(train_rv: &[f64]) -> Self {
        ConstantMean {
            level: train_rv.iter().sum::<f64>() / train_rv.len() as f64,
        }
    }

    pub fn predict(&self) -> f64 {
        self.level
    }
}
