//! Layers, loss, initialization and the AdamW optimizer.
//!
//! Parameters live in a [`ParamSet`] outside any graph. A forward pass binds
//! them as gradient-tracking leaves of a fresh [`Graph`] via
//! [`ParamSet::bind`], runs the layers, and hands the collected gradients to
//! [`AdamW::step`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("epsilon must be non-negative, got {0}")]
    NegativeEpsilon(f64),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("expected {expected} gradients, got {actual}")]
    GradientCount { expected: usize, actual: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn bind<'g>(&self, graph: &'g Graph) -> Bound<'g> {
        Bound {
            vars: self
                .values
                .iter()
                .map(|v| graph.leaf(v.clone(), true))
                .collect(),
        }
    }

    /// Replaces every value; shapes must match.
    pub fn assign(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} tensors, got {}",
                self.values.len(),
                values.len()
            )));
        }
        for (i, (old, new)) in self.values.iter().zip(&values).enumerate() {
            if old.shape() != new.shape() {
                return Err(NnError::Checkpoint(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    self.names[i],
                    old.shape(),
                    new.shape()
                )));
            }
        }
        self.values = values;
        Ok(())
    }
}

/// Parameters bound into one graph.
pub struct Bound<'g> {
    vars: Vec<Var<'g>>,
}

impl<'g> Bound<'g> {
    pub fn get(&self, id: ParamId) -> Var<'g> {
        self.vars[id.0]
    }

    /// Gradients after `backward`; parameters the loss did not reach get zeros.
    pub fn grads(&self) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect()
    }
}

/// Forward-pass mode. Dropout is only active in training.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Inverted dropout: kept units are scaled by `1/(1−p)`.
pub fn dropout<'g>(g: &'g Graph, x: Var<'g>, p: f64, mode: &mut Mode<'_>) -> Result<Var<'g>> {
    let Mode::Train(rng) = mode else { return Ok(x) };
    if p <= 0.0 {
        return Ok(x);
    }
    let n = x.value().len();
    let keep = 1.0 / (1.0 - p);
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    Ok(g.mask(x, mask)?)
}

/// Uniform on `[−a, a]` with `a = sqrt(3/fan_in)`, giving variance `1/fan_in`.
pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = (3.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-a..=a)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Mean over elements of `max(0, (r − r̂)² − ε)`.
pub fn epsilon_insensitive_loss<'g>(
    g: &'g Graph,
    r: Var<'g>,
    r_hat: Var<'g>,
    epsilon: f64,
) -> Result<Var<'g>> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(NnError::NegativeEpsilon(epsilon));
    }
    let d = g.sub(r, r_hat)?;
    let sq = g.mul(d, d)?;
    let excess = g.relu(g.affine(sq, 1.0, -epsilon));
    Ok(g.mean(excess))
}

/// Plain-value version of [`epsilon_insensitive_loss`].
pub fn epsilon_insensitive_value(r: &[f64], r_hat: &[f64], epsilon: f64) -> f64 {
    let s: f64 = r
        .iter()
        .zip(r_hat)
        .map(|(a, b)| ((a - b) * (a - b) - epsilon).max(0.0))
        .sum();
    s / r.len() as f64
}

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(ps: &mut ParamSet, name: &str, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = ps.add(format!("{name}.weight"), fan_in_uniform(&[outputs, inputs], inputs, rng));
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Dense { w, b, inputs, outputs }
    }

    /// Applies to a vector `[n]` or row-wise to a matrix `[T×n]`.
    pub fn forward<'g>(&self, g: &'g Graph, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        Ok(g.linear(x, p.get(self.w), Some(p.get(self.b)))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    None,
    Batch,
    Layer,
    Weight,
}

impl std::str::FromStr for Normalization {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Normalization::None),
            "batch" => Ok(Normalization::Batch),
            "layer" => Ok(Normalization::Layer),
            "weight" => Ok(Normalization::Weight),
            other => Err(format!("unknown normalization {other:?}")),
        }
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Normalization::None => "none",
            Normalization::Batch => "batch",
            Normalization::Layer => "layer",
            Normalization::Weight => "weight",
        };
        f.write_str(s)
    }
}

const NORM_EPS: f64 = 1e-5;

/// Causal dilated convolution over `[T×C_in]`, optionally weight-normalized.
#[derive(Debug, Clone, Copy)]
pub struct CausalConv {
    pub w: ParamId,
    pub gain: Option<ParamId>,
    pub b: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl CausalConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        weight_norm: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = kernel * in_channels;
        let v = fan_in_uniform(&[out_channels, fan_in], fan_in, rng);
        let gain = weight_norm.then(|| {
            let norms = (0..out_channels)
                .map(|r| v.row(r).iter().map(|a| a * a).sum::<f64>().sqrt())
                .collect();
            Tensor::vector(norms)
        });
        let w = ps.add(format!("{name}.weight"), v);
        let gain = gain.map(|t| ps.add(format!("{name}.gain"), t));
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        CausalConv {
            w,
            gain,
            b,
            in_channels,
            out_channels,
            kernel,
            dilation,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let w = match self.gain {
            Some(gain) => g.weight_norm_rows(p.get(self.w), p.get(gain))?,
            None => p.get(self.w),
        };
        Ok(g.conv1d(x, w, Some(p.get(self.b)), self.kernel, self.dilation)?)
    }
}

/// `1 + (k−1)(b^L − 1)/(b − 1)`, or `1 + (k−1)L` when `b = 1`.
pub fn receptive_field(kernel: usize, base: usize, layers: usize) -> usize {
    if base <= 1 {
        return 1 + (kernel - 1) * layers;
    }
    1 + (kernel - 1) * (base.pow(layers as u32) - 1) / (base - 1)
}

/// Smallest layer count whose receptive field reaches `target`.
pub fn min_layers(kernel: usize, base: usize, target: usize) -> usize {
    if kernel < 2 {
        return 1;
    }
    let mut layers = 1;
    while receptive_field(kernel, base, layers) < target {
        layers += 1;
    }
    layers
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TcnConfig {
    pub in_channels: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub dilation_base: usize,
    /// `None` picks the smallest depth covering one day of bins.
    pub layers: Option<usize>,
    pub skip_connections: bool,
    pub normalization: Normalization,
    pub dropout: f64,
}

impl TcnConfig {
    pub fn depth(&self) -> usize {
        self.layers
            .unwrap_or_else(|| min_layers(self.kernel_size, self.dilation_base, crate::BINS_PER_DAY))
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.filters == 0 {
            return Err(NnError::Config("channel counts must be positive".into()));
        }
        if self.kernel_size == 0 || self.dilation_base == 0 {
            return Err(NnError::Config("kernel size and dilation base must be positive".into()));
        }
        if self.layers == Some(0) {
            return Err(NnError::Config("layer count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct TcnLayer {
    conv: CausalConv,
    projection: Option<ParamId>,
}

/// Stack of causal dilated convolutions; layer `ℓ` uses dilation `b^ℓ`.
#[derive(Debug, Clone)]
pub struct TcnBlock {
    pub config: TcnConfig,
    layers: Vec<TcnLayer>,
}

impl TcnBlock {
    pub fn new(ps: &mut ParamSet, name: &str, config: TcnConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let depth = config.depth();
        let mut layers = Vec::with_capacity(depth);
        let mut cin = config.in_channels;
        for l in 0..depth {
            let conv = CausalConv::new(
                ps,
                &format!("{name}.{l}.conv"),
                cin,
                config.filters,
                config.kernel_size,
                config.dilation_base.pow(l as u32),
                config.normalization == Normalization::Weight,
                rng,
            );
            let projection = (config.skip_connections && cin != config.filters).then(|| {
                ps.add(
                    format!("{name}.{l}.skip"),
                    fan_in_uniform(&[config.filters, cin], cin, rng),
                )
            });
            layers.push(TcnLayer { conv, projection });
            cin = config.filters;
        }
        Ok(TcnBlock { config, layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.conv.dilation).collect()
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self.config.kernel_size, self.config.dilation_base, self.depth())
    }

    /// Maps `[T×C_in]` to `[T×filters]`.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        p: &Bound<'g>,
        x: Var<'g>,
        mode: &mut Mode<'_>,
    ) -> Result<Var<'g>> {
        let mut h = x;
        for layer in &self.layers {
            let mut y = layer.conv.forward(g, p, h)?;
            y = match self.config.normalization {
                Normalization::Layer => g.layer_norm_rows(y, NORM_EPS)?,
                Normalization::Batch => causal_standardize(g, y)?,
                Normalization::None | Normalization::Weight => y,
            };
            y = g.relu(y);
            y = dropout(g, y, self.config.dropout, mode)?;
            if self.config.skip_connections {
                let identity = match layer.projection {
                    Some(w) => g.linear(h, p.get(w), None)?,
                    None => h,
                };
                y = g.add(y, identity)?;
            }
            h = y;
        }
        Ok(h)
    }
}

/// Standardizes each channel with its running mean and variance up to the
/// current step, so no future bin leaks into the statistics.
fn causal_standardize<'g>(g: &'g Graph, y: Var<'g>) -> Result<Var<'g>> {
    let mean = g.cum_mean_rows(y)?;
    let sq = g.mul(y, y)?;
    let mean_sq = g.cum_mean_rows(sq)?;
    let var = g.sub(mean_sq, g.mul(mean, mean)?)?;
    let inv_std = g.pow(g.affine(g.relu(var), 1.0, NORM_EPS), -0.5);
    Ok(g.mul(g.sub(y, mean)?, inv_std)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

/// Single-layer LSTM or GRU with zero initial state.
///
/// GRU update: `h' = (1 − z)·h + z·n`, so `z = 1` takes the candidate `n`.
#[derive(Debug, Clone)]
pub struct RecurrentCell {
    pub kind: CellKind,
    pub hidden: usize,
    pub dropout: f64,
    w_in: ParamId,
    w_rec: ParamId,
    b_in: ParamId,
    b_rec: ParamId,
}

impl RecurrentCell {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        kind: CellKind,
        inputs: usize,
        hidden: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if inputs == 0 || hidden == 0 {
            return Err(NnError::Config("recurrent dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(NnError::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        let gates = match kind {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        };
        let w_in = ps.add(
            format!("{name}.w_in"),
            fan_in_uniform(&[gates * hidden, inputs], inputs, rng),
        );
        let w_rec = ps.add(
            format!("{name}.w_rec"),
            fan_in_uniform(&[gates * hidden, hidden], hidden, rng),
        );
        let b_in = ps.add(format!("{name}.b_in"), Tensor::zeros(&[gates * hidden]));
        let b_rec = ps.add(format!("{name}.b_rec"), Tensor::zeros(&[gates * hidden]));
        Ok(RecurrentCell {
            kind,
            hidden,
            dropout,
            w_in,
            w_rec,
            b_in,
            b_rec,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w_in, self.w_rec, self.b_in, self.b_rec]
    }

    /// Maps `[T×C_in]` to the hidden sequence `[T×hidden]`.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        p: &Bound<'g>,
        x: Var<'g>,
        mode: &mut Mode<'_>,
    ) -> Result<Var<'g>> {
        let steps = x.value().rows();
        let hd = self.hidden;
        let xin = g.linear(x, p.get(self.w_in), Some(p.get(self.b_in)))?;
        let mut h = g.constant(Tensor::zeros(&[hd]));
        let mut c = g.constant(Tensor::zeros(&[hd]));
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = g.row(xin, t)?;
            let ht = g.linear(h, p.get(self.w_rec), Some(p.get(self.b_rec)))?;
            match self.kind {
                CellKind::Lstm => {
                    let z = g.add(xt, ht)?;
                    let i = g.sigmoid(g.slice(z, 0, hd)?);
                    let f = g.sigmoid(g.slice(z, hd, hd)?);
                    let cand = g.tanh(g.slice(z, 2 * hd, hd)?);
                    let o = g.sigmoid(g.slice(z, 3 * hd, hd)?);
                    c = g.add(g.mul(f, c)?, g.mul(i, cand)?)?;
                    h = g.mul(o, g.tanh(c))?;
                }
                CellKind::Gru => {
                    let r = g.sigmoid(g.add(g.slice(xt, 0, hd)?, g.slice(ht, 0, hd)?)?);
                    let z = g.sigmoid(g.add(g.slice(xt, hd, hd)?, g.slice(ht, hd, hd)?)?);
                    let n = g.tanh(g.add(
                        g.slice(xt, 2 * hd, hd)?,
                        g.mul(r, g.slice(ht, 2 * hd, hd)?)?,
                    )?);
                    h = gru_blend(g, h, n, z)?;
                }
            }
            outputs.push(h);
        }
        let seq = g.stack_rows(&outputs)?;
        dropout(g, seq, self.dropout, mode)
    }
}

fn gru_blend<'g>(g: &'g Graph, h: Var<'g>, n: Var<'g>, z: Var<'g>) -> Result<Var<'g>> {
    let keep = g.affine(z, -1.0, 1.0);
    Ok(g.add(g.mul(keep, h)?, g.mul(z, n)?)?)
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamSet, learning_rate: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.values().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamW {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One update. Nothing changes if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(NnError::GradientCount {
                expected: params.len(),
                actual: grads.len(),
            });
        }
        for (i, gr) in grads.iter().enumerate() {
            if gr.len() != params.values[i].len() {
                return Err(NnError::Tensor(TensorError::ShapeMismatch {
                    op: "adamw_step",
                    left: params.values[i].shape().to_vec(),
                    right: gr.shape().to_vec(),
                }));
            }
            if gr.data().iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient(params.names[i].clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.learning_rate * self.weight_decay;
        for (i, gr) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.values[i].data_mut();
            for (j, &gj) in gr.data().iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] = p[j] * decay - self.learning_rate * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

const MAGIC: &[u8; 4] = b"VCKP";
const VERSION: u32 = 1;

/// Writes parameters to a little-endian file:
///
/// ```text
/// "VCKP"  u32 version  u32 meta_len  meta (UTF-8 JSON)  u32 count
/// repeated count times:
///     u32 name_len  name (UTF-8)  u32 ndim  u64 dims[ndim]  f64 values[product(dims)]
/// ```
pub fn save_checkpoint(path: &Path, params: &ParamSet, metadata: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_bytes(&mut w, metadata.as_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, value) in params.names.iter().zip(&params.values) {
        write_bytes(&mut w, name.as_bytes())?;
        w.write_all(&(value.shape().len() as u32).to_le_bytes())?;
        for &d in value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_bytes(w: &mut impl Write, bytes: &[u8]) -> std::io::Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| NnError::Checkpoint(e.to_string()))
}

/// Reads a checkpoint written by [`save_checkpoint`], returning its metadata
/// and parameters.
pub fn load_checkpoint(path: &Path) -> Result<(String, ParamSet)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let metadata = read_string(&mut r)?;
    let count = read_u32(&mut r)?;
    let mut ps = ParamSet::new();
    for _ in 0..count {
        let name = read_string(&mut r)?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        ps.add(name, Tensor::new(shape, data)?);
    }
    Ok((metadata, ps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn loss_value(r: &[f64], rh: &[f64], eps: f64) -> f64 {
        let g = Graph::new();
        let a = g.constant(Tensor::vector(r.to_vec()));
        let b = g.constant(Tensor::vector(rh.to_vec()));
        epsilon_insensitive_loss(&g, a, b, eps).unwrap().to_tensor().data()[0]
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss_value(&[0.5, -1.0], &[0.5, -1.0], 0.3), 0.0);
        assert!((loss_value(&[0.3], &[0.1], 0.01) - 0.03).abs() < 1e-15);
        let g = Graph::new();
        let r = g.constant(Tensor::vector(vec![0.1]));
        let rh = g.leaf(Tensor::vector(vec![0.1 + 0.05]), true);
        let loss = epsilon_insensitive_loss(&g, r, rh, 0.01).unwrap();
        assert_eq!(loss.to_tensor().data()[0], 0.0);
        g.backward(loss).unwrap();
        assert_eq!(rh.grad().unwrap().data(), &[0.0]);
    }

    #[test]
    fn loss_rejects_negative_epsilon() {
        let g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0]));
        assert!(matches!(
            epsilon_insensitive_loss(&g, a, a, -0.1),
            Err(NnError::NegativeEpsilon(_))
        ));
    }

    #[test]
    fn adamw_examples() {
        let mut ps = ParamSet::new();
        ps.add("p", Tensor::scalar(1.0));
        let mut opt = AdamW::new(&ps, 0.01, 0.0);
        opt.step(&mut ps, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(ps.values()[0].data(), &[1.0]);

        let mut ps = ParamSet::new();
        ps.add("p", Tensor::scalar(1.0));
        let mut opt = AdamW::new(&ps, 1.0, 0.1);
        opt.step(&mut ps, &[Tensor::scalar(0.0)]).unwrap();
        assert!((ps.values()[0].data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adamw_rejects_non_finite_gradient() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::vector(vec![1.0, 2.0]));
        let mut opt = AdamW::new(&ps, 0.1, 0.0);
        let bad = Tensor::vector(vec![0.5, f64::NAN]);
        assert!(matches!(opt.step(&mut ps, &[bad]), Err(NnError::NonFiniteGradient(_))));
        assert_eq!(ps.values()[0].data(), &[1.0, 2.0]);
        assert_eq!(opt.steps_taken(), 0);
    }

    #[test]
    fn adamw_converges_on_quadratic() {
        // loss = (p − 0.01)², started at 0, with the tuned TCN learning rate.
        let target = 0.01;
        let mut ps = ParamSet::new();
        let id = ps.add("p", Tensor::scalar(0.0));
        let mut opt = AdamW::new(&ps, 6.49e-5, 0.0);
        for _ in 0..500 {
            let g = Graph::new();
            let b = ps.bind(&g);
            let t = g.constant(Tensor::scalar(target));
            let d = g.sub(b.get(id), t).unwrap();
            let loss = g.mul(d, d).unwrap();
            g.backward(loss).unwrap();
            opt.step(&mut ps, &b.grads()).unwrap();
        }
        assert!((ps.get(id).data()[0] - target).abs() < 1e-3);
    }

    #[test]
    fn receptive_field_examples() {
        assert_eq!(receptive_field(5, 4, 3), 85);
        assert_eq!(receptive_field(5, 4, 4), 341);
        assert_eq!(min_layers(5, 4, 96), 4);
        assert_eq!(receptive_field(3, 1, 4), 9);
    }

    fn tcn_config(norm: Normalization, skip: bool) -> TcnConfig {
        TcnConfig {
            in_channels: 2,
            filters: 3,
            kernel_size: 3,
            dilation_base: 2,
            layers: None,
            skip_connections: skip,
            normalization: norm,
            dropout: 0.0,
        }
    }

    fn run_tcn(block: &TcnBlock, ps: &ParamSet, x: &Tensor) -> Tensor {
        let g = Graph::new();
        let p = ps.bind(&g);
        let xv = g.constant(x.clone());
        block.forward(&g, &p, xv, &mut Mode::Eval).unwrap().to_tensor()
    }

    #[test]
    fn tcn_depth_and_dilations() {
        let mut ps = ParamSet::new();
        let block = TcnBlock::new(&mut ps, "t", tcn_config(Normalization::None, true), &mut rng(1)).unwrap();
        assert_eq!(block.depth(), 6);
        assert_eq!(block.dilations(), vec![1, 2, 4, 8, 16, 32]);
        assert!(block.receptive_field() >= 96);
    }

    #[test]
    fn tcn_zero_input_gives_zero_output() {
        for norm in [Normalization::None, Normalization::Batch, Normalization::Layer, Normalization::Weight] {
            let mut ps = ParamSet::new();
            let block = TcnBlock::new(&mut ps, "t", tcn_config(norm, true), &mut rng(2)).unwrap();
            let y = run_tcn(&block, &ps, &Tensor::zeros(&[20, 2]));
            assert!(y.data().iter().all(|&v| v == 0.0), "{norm:?}");
            assert_eq!(y.shape(), &[20, 3]);
        }
    }

    #[test]
    fn tcn_is_causal_for_every_normalization() {
        for norm in [Normalization::None, Normalization::Batch, Normalization::Layer, Normalization::Weight] {
            for skip in [false, true] {
                let mut ps = ParamSet::new();
                let block = TcnBlock::new(&mut ps, "t", tcn_config(norm, skip), &mut rng(3)).unwrap();
                let data: Vec<f64> = (0..60).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect();
                let x = Tensor::matrix(30, 2, data).unwrap();
                let base = run_tcn(&block, &ps, &x);
                let mut later = x.clone();
                later.data_mut()[2 * 17] += 1.5;
                let changed = run_tcn(&block, &ps, &later);
                assert_eq!(&base.data()[..17 * 3], &changed.data()[..17 * 3]);
                assert_ne!(&base.data()[17 * 3..], &changed.data()[17 * 3..]);
            }
        }
    }

    #[test]
    fn tcn_impulse_at_start_reaches_only_later_steps() {
        let mut ps = ParamSet::new();
        let block = TcnBlock::new(&mut ps, "t", tcn_config(Normalization::None, false), &mut rng(4)).unwrap();
        let mut x = Tensor::zeros(&[10, 2]);
        x.data_mut()[0] = 1.0;
        let y = run_tcn(&block, &ps, &x);
        assert_eq!(y.shape(), &[10, 3]);
    }

    #[test]
    fn tcn_parameter_count_independent_of_length() {
        let mut ps = ParamSet::new();
        let block = TcnBlock::new(&mut ps, "t", tcn_config(Normalization::Weight, true), &mut rng(5)).unwrap();
        let n = ps.scalar_count();
        for len in [1, 7, 96, 200] {
            let y = run_tcn(&block, &ps, &Tensor::filled(&[len, 2], 0.1));
            assert_eq!(y.shape(), &[len, 3]);
            assert_eq!(ps.scalar_count(), n);
        }
    }

    #[test]
    fn lstm_with_zero_weights_stays_zero() {
        let mut ps = ParamSet::new();
        let cell = RecurrentCell::new(&mut ps, "l", CellKind::Lstm, 3, 4, 0.0, &mut rng(6)).unwrap();
        for id in cell.param_ids() {
            let shape = ps.get(id).shape().to_vec();
            *ps.get_mut(id) = Tensor::zeros(&shape);
        }
        let g = Graph::new();
        let p = ps.bind(&g);
        let x = g.constant(Tensor::filled(&[5, 3], 0.7));
        let h = cell.forward(&g, &p, x, &mut Mode::Eval).unwrap().to_tensor();
        assert_eq!(h.shape(), &[5, 4]);
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_with_saturated_update_gate_copies_candidate() {
        let g = Graph::new();
        let h = g.constant(Tensor::vector(vec![0.4, -0.9]));
        let n = g.constant(Tensor::vector(vec![0.1, 0.25]));
        let z = g.constant(Tensor::vector(vec![1.0, 1.0]));
        let out = gru_blend(&g, h, n, z).unwrap().to_tensor();
        assert_eq!(out.data(), &[0.1, 0.25]);
    }

    fn recurrent_fd_check(kind: CellKind) {
        let mut ps = ParamSet::new();
        let cell = RecurrentCell::new(&mut ps, "r", kind, 2, 3, 0.0, &mut rng(7)).unwrap();
        for id in cell.param_ids() {
            let t = ps.get_mut(id);
            for (j, v) in t.data_mut().iter_mut().enumerate() {
                *v += 0.05 * ((j as f64) * 1.3).sin();
            }
        }
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).cos()).collect();
        let x = Tensor::matrix(10, 2, x).unwrap();
        let value = |ps: &ParamSet| {
            let g = Graph::new();
            let p = ps.bind(&g);
            let h = cell.forward(&g, &p, g.constant(x.clone()), &mut Mode::Eval).unwrap();
            let last = g.row(h, 9).unwrap();
            let s = g.sum(g.mul(last, last).unwrap());
            (s.to_tensor().data()[0], {
                g.backward(s).unwrap();
                p.grads()
            })
        };
        let (_, grads) = value(&ps);
        let step = 1e-5;
        for (k, grad) in grads.iter().enumerate() {
            for j in 0..grad.len() {
                let mut plus = ps.clone();
                plus.values[k].data_mut()[j] += step;
                let mut minus = ps.clone();
                minus.values[k].data_mut()[j] -= step;
                let numeric = (value(&plus).0 - value(&minus).0) / (2.0 * step);
                let a = grad.data()[j];
                assert!(
                    (a - numeric).abs() <= 1e-4 * numeric.abs().max(1e-3),
                    "{kind:?} param {k}[{j}]: {a} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        recurrent_fd_check(CellKind::Lstm);
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        recurrent_fd_check(CellKind::Gru);
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let make = || {
            let mut ps = ParamSet::new();
            Dense::new(&mut ps, "d", 5, 3, &mut rng(11));
            ps
        };
        let (a, b) = (make(), make());
        assert_eq!(a, b);
        assert!(a.values()[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_variance_matches_fan_in() {
        let fan_in = 40;
        let t = fan_in_uniform(&[250, fan_in], fan_in, &mut rng(12));
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 1.0 / fan_in as f64;
        assert!((var - target).abs() < 0.1 * target, "{var} vs {target}");
    }

    #[test]
    fn dropout_is_identity_in_eval_and_scaled_in_train() {
        let g = Graph::new();
        let x = g.constant(Tensor::filled(&[1000], 1.0));
        let y = dropout(&g, x, 0.5, &mut Mode::Eval).unwrap();
        assert_eq!(y.id(), x.id());
        let mut r = rng(13);
        let y = dropout(&g, x, 0.5, &mut Mode::Train(&mut r)).unwrap().to_tensor();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = y.data().iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut ps = ParamSet::new();
        ps.add("a.weight", Tensor::matrix(2, 3, vec![1.0, -2.5, 3e-300, f64::MIN_POSITIVE, 0.1, -0.0]).unwrap());
        ps.add("a.bias", Tensor::vector(vec![7.0, 8.0]));
        ps.add("s", Tensor::scalar(std::f64::consts::PI));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &ps, "{\"kind\":\"tcn\"}").unwrap();
        let (meta, back) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, "{\"kind\":\"tcn\"}");
        assert_eq!(back.names(), ps.names());
        for (x, y) in back.values().iter().zip(ps.values()) {
            assert_eq!(x.shape(), y.shape());
            let bx: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
            let by: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bx, by);
        }
        std::fs::write(&path, b"nope").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn loss_is_non_negative_and_reduces_to_mse(
            pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..20),
            eps in 0.0f64..2.0,
        ) {
            let (r, rh): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let l = loss_value(&r, &rh, eps);
            prop_assert!(l >= 0.0);
            let mse = r.iter().zip(&rh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / r.len() as f64;
            prop_assert!((loss_value(&r, &rh, 0.0) - mse).abs() <= 1e-12 * (1.0 + mse));
            prop_assert!((l - epsilon_insensitive_value(&r, &rh, eps)).abs() <= 1e-12);
        }

        #[test]
        fn loss_non_increasing_in_epsilon(
            pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..20),
            e1 in 0.0f64..2.0,
            de in 0.0f64..2.0,
        ) {
            let (r, rh): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(loss_value(&r, &rh, e1 + de) <= loss_value(&r, &rh, e1));
        }

        #[test]
        fn adamw_trajectories_are_reproducible(seed in 0u64..1000, lr in 1e-4f64..1e-1, wd in 0.0f64..0.1) {
            let run = || {
                let mut r = rng(seed);
                let mut ps = ParamSet::new();
                let d = Dense::new(&mut ps, "d", 3, 2, &mut r);
                let mut opt = AdamW::new(&ps, lr, wd);
                for _ in 0..5 {
                    let g = Graph::new();
                    let p = ps.bind(&g);
                    let x = g.constant(Tensor::vector(vec![0.3, -0.2, 0.9]));
                    let y = d.forward(&g, &p, x).unwrap();
                    let t = g.constant(Tensor::vector(vec![1.0, -1.0]));
                    let loss = epsilon_insensitive_loss(&g, t, y, 0.01).unwrap();
                    g.backward(loss).unwrap();
                    opt.step(&mut ps, &p.grads()).unwrap();
                }
                ps
            };
            prop_assert_eq!(run(), run());
        }
    }
}
