//! Minimal reverse-mode automatic differentiation over dense 1-D and 2-D arrays.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value and the handles of its parents, so parents always precede children.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients for
//! every node that (transitively) depends on a leaf created with
//! `requires_grad = true`.
//!
//! Two-dimensional values are row-major `[rows, cols]`; sequence layers use
//! rows for time and columns for channels. There is no broadcasting: every
//! binary operation requires identical shapes.
//!
//! ```
//! use volcast::tensor::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = g.leaf(Tensor::scalar(3.0), true);
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(x.grad().unwrap().data(), &[6.0]);
//! ```

use std::cell::{Ref, RefCell};
use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph; call reset_grads before running it again")]
    BackwardAlreadyRun,
    #[error("loss does not depend on any leaf that requires a gradient")]
    Detached,
}

/// Dense array of `f64` values in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor {
            shape: vec![n, n],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Number of rows when viewed as a matrix; a vector is a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Number of columns when viewed as a matrix.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// Elementwise operation kinds reachable through [`Graph::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Relu,
    Sigmoid,
    Tanh,
    Add,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Affine { x: usize, scale: f64 },
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Pow { x: usize, exponent: f64 },
    Mask { x: usize, mask: Vec<f64> },
    Linear { x: usize, w: usize, b: Option<usize> },
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        kernel: usize,
        dilation: usize,
    },
    Row { x: usize, row: usize },
    Slice { x: usize, start: usize },
    Concat(Vec<usize>),
    StackRows(Vec<usize>),
    Sum(usize),
    Mean(usize),
    LayerNormRows { x: usize, inv_std: Vec<f64> },
    CumMeanRows(usize),
    WeightNormRows { v: usize, g: usize, norms: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

/// Differentiation tape. Rebuilt for every forward pass.
#[derive(Default)]
pub struct Graph {
    tape: RefCell<Tape>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'g, Tensor> {
        Ref::map(self.graph.tape.borrow(), |t| &t.nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.tape.borrow().nodes[self.id].requires_grad
    }

    /// Gradient accumulated by the last backward pass, if this node received one.
    pub fn grad(&self) -> Option<Tensor> {
        let tape = self.graph.tape.borrow();
        let node = &tape.nodes[self.id];
        tape.grads
            .get(self.id)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor {
                shape: node.value.shape.clone(),
                data: g.clone(),
            })
    }
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

fn invalid(op: &'static str, reason: impl Into<String>) -> TensorError {
    TensorError::InvalidArgument {
        op,
        reason: reason.into(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut tape = self.tape.borrow_mut();
        tape.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: tape.nodes.len() - 1,
        }
    }

    fn check_owner(&self, v: Var<'_>) {
        assert!(
            std::ptr::eq(self, v.graph),
            "variable belongs to a different graph"
        );
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let tape = self.tape.borrow();
        ids.iter().any(|&i| tape.nodes[i].requires_grad)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn elementwise<'g>(&'g self, kind: ElementwiseKind, inputs: &[Var<'g>]) -> Result<Var<'g>> {
        let arity = match kind {
            ElementwiseKind::Add | ElementwiseKind::Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(invalid(
                "elementwise",
                format!("{kind:?} takes {arity} inputs, got {}", inputs.len()),
            ));
        }
        match kind {
            ElementwiseKind::Relu => Ok(self.relu(inputs[0])),
            ElementwiseKind::Sigmoid => Ok(self.sigmoid(inputs[0])),
            ElementwiseKind::Tanh => Ok(self.tanh(inputs[0])),
            ElementwiseKind::Add => self.add(inputs[0], inputs[1]),
            ElementwiseKind::Mul => self.mul(inputs[0], inputs[1]),
        }
    }

    fn binary<'g>(
        &'g self,
        a: Var<'g>,
        b: Var<'g>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'g>> {
        self.check_owner(a);
        self.check_owner(b);
        let value = {
            let (av, bv) = (a.value(), b.value());
            if av.shape != bv.shape {
                return Err(mismatch(name, &av, &bv));
            }
            let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
            Tensor {
                shape: av.shape.clone(),
                data,
            }
        };
        let rg = self.rg(&[a.id, b.id]);
        Ok(self.push(value, op, rg))
    }

    pub fn add<'g>(&'g self, a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a.id, b.id))
    }

    pub fn sub<'g>(&'g self, a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a.id, b.id))
    }

    pub fn mul<'g>(&'g self, a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a.id, b.id))
    }

    fn unary<'g>(&'g self, a: Var<'g>, f: impl Fn(f64) -> f64, op: Op) -> Var<'g> {
        self.check_owner(a);
        let value = {
            let av = a.value();
            Tensor {
                shape: av.shape.clone(),
                data: av.data.iter().map(|&x| f(x)).collect(),
            }
        };
        let rg = self.rg(&[a.id]);
        self.push(value, op, rg)
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine<'g>(&'g self, a: Var<'g>, scale: f64, shift: f64) -> Var<'g> {
        self.unary(a, |x| scale * x + shift, Op::Affine { x: a.id, scale })
    }

    pub fn relu<'g>(&'g self, a: Var<'g>) -> Var<'g> {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a.id))
    }

    pub fn sigmoid<'g>(&'g self, a: Var<'g>) -> Var<'g> {
        self.unary(a, sigmoid, Op::Sigmoid(a.id))
    }

    pub fn tanh<'g>(&'g self, a: Var<'g>) -> Var<'g> {
        self.unary(a, f64::tanh, Op::Tanh(a.id))
    }

    /// Elementwise power. Inputs must be positive unless `exponent` is a
    /// non-negative integer.
    pub fn pow<'g>(&'g self, a: Var<'g>, exponent: f64) -> Var<'g> {
        self.unary(a, |x| x.powf(exponent), Op::Pow { x: a.id, exponent })
    }

    /// Multiplies by a fixed mask (dropout).
    pub fn mask<'g>(&'g self, a: Var<'g>, mask: Vec<f64>) -> Result<Var<'g>> {
        self.check_owner(a);
        let value = {
            let av = a.value();
            if av.len() != mask.len() {
                return Err(invalid(
                    "mask",
                    format!("mask has {} entries for {} values", mask.len(), av.len()),
                ));
            }
            Tensor {
                shape: av.shape.clone(),
                data: av.data.iter().zip(&mask).map(|(x, m)| x * m).collect(),
            }
        };
        let rg = self.rg(&[a.id]);
        Ok(self.push(value, Op::Mask { x: a.id, mask }, rg))
    }

    /// `weights · x + bias` for a vector `x[n]`, `weights[m×n]`, `bias[m]`.
    pub fn dense<'g>(&'g self, x: Var<'g>, weights: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
        if x.value().shape.len() != 1 {
            return Err(invalid("dense", "input must be a vector"));
        }
        self.linear(x, weights, Some(bias))
    }

    /// Row-wise affine map: `x[T×n]` (or a vector `x[n]`) times `weights[m×n]`ᵀ
    /// plus `bias[m]`, giving `[T×m]` (or `[m]`).
    pub fn linear<'g>(&'g self, x: Var<'g>, w: Var<'g>, b: Option<Var<'g>>) -> Result<Var<'g>> {
        self.check_owner(x);
        self.check_owner(w);
        let value = {
            let (xv, wv) = (x.value(), w.value());
            if wv.shape.len() != 2 || xv.shape.is_empty() || xv.shape.len() > 2 {
                return Err(mismatch("linear", &xv, &wv));
            }
            let (m, n) = (wv.shape[0], wv.shape[1]);
            if xv.cols() != n {
                return Err(mismatch("linear", &xv, &wv));
            }
            let bv = match b {
                Some(b) => {
                    self.check_owner(b);
                    let bv = b.value();
                    if bv.shape != [m] {
                        return Err(mismatch("linear", &wv, &bv));
                    }
                    Some(bv.data.clone())
                }
                None => None,
            };
            let rows = xv.rows();
            let mut out = vec![0.0; rows * m];
            for t in 0..rows {
                let xr = xv.row(t);
                let or = &mut out[t * m..(t + 1) * m];
                for (o, slot) in or.iter_mut().enumerate() {
                    let wr = &wv.data[o * n..(o + 1) * n];
                    let mut acc = bv.as_ref().map_or(0.0, |b| b[o]);
                    for (a, c) in xr.iter().zip(wr) {
                        acc += a * c;
                    }
                    *slot = acc;
                }
            }
            let shape = if xv.shape.len() == 1 { vec![m] } else { vec![rows, m] };
            Tensor { shape, data: out }
        };
        let mut ids = vec![x.id, w.id];
        ids.extend(b.map(|b| b.id));
        let rg = self.rg(&ids);
        Ok(self.push(
            value,
            Op::Linear {
                x: x.id,
                w: w.id,
                b: b.map(|b| b.id),
            },
            rg,
        ))
    }

    /// Single-channel causal dilated convolution:
    /// `y[s] = Σ_{i<k} filter[i] · x[s − d·i]`, with out-of-range terms zero.
    /// The output has the same length as `x`.
    pub fn causal_dilated_conv1d<'g>(
        &'g self,
        x: Var<'g>,
        filter: Var<'g>,
        dilation: usize,
    ) -> Result<Var<'g>> {
        let (t_len, k) = {
            let (xv, fv) = (x.value(), filter.value());
            if xv.shape.len() != 1 || fv.shape.len() != 1 {
                return Err(invalid("causal_dilated_conv1d", "x and filter must be vectors"));
            }
            (xv.len(), fv.len())
        };
        if t_len == 0 {
            return Err(invalid("causal_dilated_conv1d", "empty input"));
        }
        if k == 0 {
            return Err(invalid("causal_dilated_conv1d", "kernel size must be positive"));
        }
        if dilation == 0 {
            return Err(invalid("causal_dilated_conv1d", "dilation must be positive"));
        }
        self.conv_impl(x, filter, None, k, dilation, true)
    }

    /// Multi-channel causal dilated convolution over a sequence `x[T×C_in]`.
    ///
    /// `weights` is `[C_out, k·C_in]` where column `i·C_in + c` multiplies
    /// `x[s − d·i, c]`. Returns `[T×C_out]`.
    pub fn conv1d<'g>(
        &'g self,
        x: Var<'g>,
        weights: Var<'g>,
        bias: Option<Var<'g>>,
        kernel: usize,
        dilation: usize,
    ) -> Result<Var<'g>> {
        if kernel == 0 {
            return Err(invalid("conv1d", "kernel size must be positive"));
        }
        if dilation == 0 {
            return Err(invalid("conv1d", "dilation must be positive"));
        }
        {
            let (xv, wv) = (x.value(), weights.value());
            if xv.shape.len() != 2 || wv.shape.len() != 2 || wv.shape[1] != kernel * xv.shape[1] {
                return Err(mismatch("conv1d", &xv, &wv));
            }
            if xv.shape[0] == 0 {
                return Err(invalid("conv1d", "empty input"));
            }
            if let Some(b) = bias {
                if b.value().shape != [wv.shape[0]] {
                    return Err(mismatch("conv1d", &wv, &b.value()));
                }
            }
        }
        self.conv_impl(x, weights, bias, kernel, dilation, false)
    }

    fn conv_impl<'g>(
        &'g self,
        x: Var<'g>,
        w: Var<'g>,
        b: Option<Var<'g>>,
        kernel: usize,
        dilation: usize,
        vector_io: bool,
    ) -> Result<Var<'g>> {
        self.check_owner(x);
        self.check_owner(w);
        let value = {
            let (xv, wv) = (x.value(), w.value());
            let t_len = xv.rows().max(if vector_io { xv.len() } else { 0 });
            let cin = if vector_io { 1 } else { xv.cols() };
            let cout = if vector_io { 1 } else { wv.shape[0] };
            let bv = b.map(|b| b.value().data.clone());
            let mut out = vec![0.0; t_len * cout];
            conv_forward(
                &xv.data, &wv.data, bv.as_deref(), &mut out, t_len, cin, cout, kernel, dilation,
            );
            let shape = if vector_io { vec![t_len] } else { vec![t_len, cout] };
            Tensor { shape, data: out }
        };
        let mut ids = vec![x.id, w.id];
        ids.extend(b.map(|b| b.id));
        let rg = self.rg(&ids);
        Ok(self.push(
            value,
            Op::Conv {
                x: x.id,
                w: w.id,
                b: b.map(|b| b.id),
                kernel,
                dilation,
            },
            rg,
        ))
    }

    /// Row `row` of a matrix, as a vector.
    pub fn row<'g>(&'g self, x: Var<'g>, row: usize) -> Result<Var<'g>> {
        self.check_owner(x);
        let value = {
            let xv = x.value();
            if xv.shape.len() != 2 || row >= xv.shape[0] {
                return Err(invalid("row", format!("row {row} out of range for {:?}", xv.shape)));
            }
            Tensor::vector(xv.row(row).to_vec())
        };
        let rg = self.rg(&[x.id]);
        Ok(self.push(value, Op::Row { x: x.id, row }, rg))
    }

    /// Contiguous sub-vector `x[start..start+len]`.
    pub fn slice<'g>(&'g self, x: Var<'g>, start: usize, len: usize) -> Result<Var<'g>> {
        self.check_owner(x);
        let value = {
            let xv = x.value();
            if xv.shape.len() != 1 || start + len > xv.len() {
                return Err(invalid(
                    "slice",
                    format!("[{start}, {}) out of range for {:?}", start + len, xv.shape),
                ));
            }
            Tensor::vector(xv.data[start..start + len].to_vec())
        };
        let rg = self.rg(&[x.id]);
        Ok(self.push(value, Op::Slice { x: x.id, start }, rg))
    }

    /// Joins vectors end to end.
    pub fn concat<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        if parts.is_empty() {
            return Err(invalid("concat", "no inputs"));
        }
        let mut data = Vec::new();
        for p in parts {
            self.check_owner(*p);
            let pv = p.value();
            if pv.shape.len() != 1 {
                return Err(invalid("concat", "inputs must be vectors"));
            }
            data.extend_from_slice(&pv.data);
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.rg(&ids);
        Ok(self.push(Tensor::vector(data), Op::Concat(ids), rg))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows<'g>(&'g self, rows: &[Var<'g>]) -> Result<Var<'g>> {
        if rows.is_empty() {
            return Err(invalid("stack_rows", "no inputs"));
        }
        let width = rows[0].value().len();
        let mut data = Vec::with_capacity(width * rows.len());
        for r in rows {
            self.check_owner(*r);
            let rv = r.value();
            if rv.shape != [width] {
                return Err(invalid("stack_rows", "rows must be vectors of equal length"));
            }
            data.extend_from_slice(&rv.data);
        }
        let ids: Vec<usize> = rows.iter().map(|r| r.id).collect();
        let rg = self.rg(&ids);
        Ok(self.push(
            Tensor {
                shape: vec![rows.len(), width],
                data,
            },
            Op::StackRows(ids),
            rg,
        ))
    }

    pub fn sum<'g>(&'g self, a: Var<'g>) -> Var<'g> {
        self.check_owner(a);
        let s = a.value().data.iter().sum();
        let rg = self.rg(&[a.id]);
        self.push(Tensor::scalar(s), Op::Sum(a.id), rg)
    }

    pub fn mean<'g>(&'g self, a: Var<'g>) -> Var<'g> {
        self.check_owner(a);
        let s = {
            let av = a.value();
            av.data.iter().sum::<f64>() / av.len() as f64
        };
        let rg = self.rg(&[a.id]);
        self.push(Tensor::scalar(s), Op::Mean(a.id), rg)
    }

    /// Standardizes every row of a matrix over its columns.
    pub fn layer_norm_rows<'g>(&'g self, x: Var<'g>, eps: f64) -> Result<Var<'g>> {
        self.check_owner(x);
        let (value, inv_std) = {
            let xv = x.value();
            if xv.shape.len() != 2 {
                return Err(invalid("layer_norm_rows", "input must be a matrix"));
            }
            let c = xv.cols();
            let mut out = vec![0.0; xv.len()];
            let mut inv_std = Vec::with_capacity(xv.rows());
            for r in 0..xv.rows() {
                let row = xv.row(r);
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let is = 1.0 / (var + eps).sqrt();
                for (o, v) in out[r * c..(r + 1) * c].iter_mut().zip(row) {
                    *o = (v - mean) * is;
                }
                inv_std.push(is);
            }
            (
                Tensor {
                    shape: xv.shape.clone(),
                    data: out,
                },
                inv_std,
            )
        };
        let rg = self.rg(&[x.id]);
        Ok(self.push(value, Op::LayerNormRows { x: x.id, inv_std }, rg))
    }

    /// Running mean down the rows: `y[s, c] = mean_{t ≤ s} x[t, c]`.
    pub fn cum_mean_rows<'g>(&'g self, x: Var<'g>) -> Result<Var<'g>> {
        self.check_owner(x);
        let value = {
            let xv = x.value();
            if xv.shape.len() != 2 {
                return Err(invalid("cum_mean_rows", "input must be a matrix"));
            }
            let c = xv.cols();
            let mut acc = vec![0.0; c];
            let mut out = vec![0.0; xv.len()];
            for r in 0..xv.rows() {
                let n = (r + 1) as f64;
                for j in 0..c {
                    acc[j] += xv.data[r * c + j];
                    out[r * c + j] = acc[j] / n;
                }
            }
            Tensor {
                shape: xv.shape.clone(),
                data: out,
            }
        };
        let rg = self.rg(&[x.id]);
        Ok(self.push(value, Op::CumMeanRows(x.id), rg))
    }

    /// Weight normalization: row `i` of the result is `g[i] · v[i] / ‖v[i]‖`.
    /// A zero row stays zero.
    pub fn weight_norm_rows<'g>(&'g self, v: Var<'g>, g: Var<'g>) -> Result<Var<'g>> {
        self.check_owner(v);
        self.check_owner(g);
        let (value, norms) = {
            let (vv, gv) = (v.value(), g.value());
            if vv.shape.len() != 2 || gv.shape != [vv.shape[0]] {
                return Err(mismatch("weight_norm_rows", &vv, &gv));
            }
            let c = vv.cols();
            let mut out = vec![0.0; vv.len()];
            let mut norms = Vec::with_capacity(vv.rows());
            for r in 0..vv.rows() {
                let row = vv.row(r);
                let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm > 0.0 {
                    let s = gv.data[r] / norm;
                    for (o, a) in out[r * c..(r + 1) * c].iter_mut().zip(row) {
                        *o = a * s;
                    }
                }
                norms.push(norm);
            }
            (
                Tensor {
                    shape: vv.shape.clone(),
                    data: out,
                },
                norms,
            )
        };
        let rg = self.rg(&[v.id, g.id]);
        Ok(self.push(
            value,
            Op::WeightNormRows {
                v: v.id,
                g: g.id,
                norms,
            },
            rg,
        ))
    }

    /// Clears gradients so that `backward` may run again.
    pub fn reset_grads(&self) {
        let mut tape = self.tape.borrow_mut();
        tape.grads.clear();
        tape.backward_done = false;
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        self.check_owner(loss);
        let mut tape = self.tape.borrow_mut();
        if tape.backward_done {
            return Err(TensorError::BackwardAlreadyRun);
        }
        let root = &tape.nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(root.value.shape.clone()));
        }
        if !root.requires_grad {
            return Err(TensorError::Detached);
        }
        let Tape { nodes, grads, backward_done } = &mut *tape;
        grads.clear();
        grads.resize(loss.id + 1, None);
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(gout) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                propagate(nodes, grads, id, &gout);
            }
            grads[id] = Some(gout);
        }
        *backward_done = true;
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    w: &[f64],
    b: Option<&[f64]>,
    out: &mut [f64],
    t_len: usize,
    cin: usize,
    cout: usize,
    kernel: usize,
    dilation: usize,
) {
    let wk = kernel * cin;
    for s in 0..t_len {
        let orow = &mut out[s * cout..(s + 1) * cout];
        for (o, slot) in orow.iter_mut().enumerate() {
            let wrow = &w[o * wk..(o + 1) * wk];
            let mut acc = b.map_or(0.0, |b| b[o]);
            for i in 0..kernel {
                let back = dilation * i;
                if back > s {
                    break;
                }
                let t = s - back;
                let xr = &x[t * cin..(t + 1) * cin];
                let wi = &wrow[i * cin..(i + 1) * cin];
                for (a, c) in xr.iter().zip(wi) {
                    acc += a * c;
                }
            }
            *slot = acc;
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) {
    let needs = |i: usize| nodes[i].requires_grad;
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &p in [a, b].iter() {
                if needs(*p) {
                    accumulate(grads, *p, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                }
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            if needs(*b) {
                accumulate(grads, *b, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                let bv = &val(*b).data;
                accumulate(grads, *a, g.len(), |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(bv) {
                        *d += g * y;
                    }
                });
            }
            if needs(*b) {
                let av = &val(*a).data;
                accumulate(grads, *b, g.len(), |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(av) {
                        *d += g * x;
                    }
                });
            }
        }
        Op::Affine { x, scale } => {
            if needs(*x) {
                accumulate(grads, *x, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += scale * g));
            }
        }
        Op::Relu(x) => {
            if needs(*x) {
                let xv = &val(*x).data;
                accumulate(grads, *x, g.len(), |d| {
                    for ((d, g), v) in d.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
        }
        Op::Sigmoid(x) => {
            if needs(*x) {
                let y = &nodes[id].value.data;
                accumulate(grads, *x, g.len(), |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                        *d += g * y * (1.0 - y);
                    }
                });
            }
        }
        Op::Tanh(x) => {
            if needs(*x) {
                let y = &nodes[id].value.data;
                accumulate(grads, *x, g.len(), |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                        *d += g * (1.0 - y * y);
                    }
                });
            }
        }
        Op::Pow { x, exponent } => {
            if needs(*x) {
                let xv = &val(*x).data;
                accumulate(grads, *x, g.len(), |d| {
                    for ((d, g), v) in d.iter_mut().zip(g).zip(xv) {
                        *d += g * exponent * v.powf(exponent - 1.0);
                    }
                });
            }
        }
        Op::Mask { x, mask } => {
            if needs(*x) {
                accumulate(grads, *x, g.len(), |d| {
                    for ((d, g), m) in d.iter_mut().zip(g).zip(mask) {
                        *d += g * m;
                    }
                });
            }
        }
        Op::Linear { x, w, b } => {
            let (xv, wv) = (val(*x), val(*w));
            let (m, n) = (wv.shape[0], wv.shape[1]);
            let rows = xv.rows();
            if needs(*x) {
                accumulate(grads, *x, xv.len(), |dx| {
                    for t in 0..rows {
                        let gr = &g[t * m..(t + 1) * m];
                        let dxr = &mut dx[t * n..(t + 1) * n];
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let wr = &wv.data[o * n..(o + 1) * n];
                            for (d, c) in dxr.iter_mut().zip(wr) {
                                *d += go * c;
                            }
                        }
                    }
                });
            }
            if needs(*w) {
                accumulate(grads, *w, wv.len(), |dw| {
                    for t in 0..rows {
                        let gr = &g[t * m..(t + 1) * m];
                        let xr = xv.row(t);
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let dwr = &mut dw[o * n..(o + 1) * n];
                            for (d, a) in dwr.iter_mut().zip(xr) {
                                *d += go * a;
                            }
                        }
                    }
                });
            }
            if let Some(b) = b {
                if needs(*b) {
                    accumulate(grads, *b, m, |db| {
                        for t in 0..rows {
                            for (d, go) in db.iter_mut().zip(&g[t * m..(t + 1) * m]) {
                                *d += go;
                            }
                        }
                    });
                }
            }
        }
        Op::Conv {
            x,
            w,
            b,
            kernel,
            dilation,
        } => {
            let (xv, wv) = (val(*x), val(*w));
            let vector_io = xv.shape.len() == 1;
            let t_len = if vector_io { xv.len() } else { xv.rows() };
            let cin = if vector_io { 1 } else { xv.cols() };
            let cout = if vector_io { 1 } else { wv.shape[0] };
            let wk = kernel * cin;
            if needs(*x) {
                accumulate(grads, *x, xv.len(), |dx| {
                    for s in 0..t_len {
                        let gr = &g[s * cout..(s + 1) * cout];
                        for i in 0..*kernel {
                            let back = dilation * i;
                            if back > s {
                                break;
                            }
                            let t = s - back;
                            let dxr = &mut dx[t * cin..(t + 1) * cin];
                            for (o, &go) in gr.iter().enumerate() {
                                if go == 0.0 {
                                    continue;
                                }
                                let wi = &wv.data[o * wk + i * cin..o * wk + (i + 1) * cin];
                                for (d, c) in dxr.iter_mut().zip(wi) {
                                    *d += go * c;
                                }
                            }
                        }
                    }
                });
            }
            if needs(*w) {
                accumulate(grads, *w, wv.len(), |dw| {
                    for s in 0..t_len {
                        let gr = &g[s * cout..(s + 1) * cout];
                        for i in 0..*kernel {
                            let back = dilation * i;
                            if back > s {
                                break;
                            }
                            let t = s - back;
                            let xr = &xv.data[t * cin..(t + 1) * cin];
                            for (o, &go) in gr.iter().enumerate() {
                                if go == 0.0 {
                                    continue;
                                }
                                let dwi = &mut dw[o * wk + i * cin..o * wk + (i + 1) * cin];
                                for (d, a) in dwi.iter_mut().zip(xr) {
                                    *d += go * a;
                                }
                            }
                        }
                    }
                });
            }
            if let Some(b) = b {
                if needs(*b) {
                    accumulate(grads, *b, cout, |db| {
                        for s in 0..t_len {
                            for (d, go) in db.iter_mut().zip(&g[s * cout..(s + 1) * cout]) {
                                *d += go;
                            }
                        }
                    });
                }
            }
        }
        Op::Row { x, row } => {
            if needs(*x) {
                let xv = val(*x);
                let c = xv.cols();
                accumulate(grads, *x, xv.len(), |d| {
                    for (d, g) in d[row * c..(row + 1) * c].iter_mut().zip(g) {
                        *d += g;
                    }
                });
            }
        }
        Op::Slice { x, start } => {
            if needs(*x) {
                let n = val(*x).len();
                accumulate(grads, *x, n, |d| {
                    for (d, g) in d[*start..start + g.len()].iter_mut().zip(g) {
                        *d += g;
                    }
                });
            }
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = val(p).len();
                if needs(p) {
                    let gs = &g[offset..offset + n];
                    accumulate(grads, p, n, |d| d.iter_mut().zip(gs).for_each(|(d, g)| *d += g));
                }
                offset += n;
            }
        }
        Op::StackRows(rows) => {
            let width = nodes[id].value.cols();
            for (r, &p) in rows.iter().enumerate() {
                if needs(p) {
                    let gs = &g[r * width..(r + 1) * width];
                    accumulate(grads, p, width, |d| d.iter_mut().zip(gs).for_each(|(d, g)| *d += g));
                }
            }
        }
        Op::Sum(x) => {
            if needs(*x) {
                let n = val(*x).len();
                accumulate(grads, *x, n, |d| d.iter_mut().for_each(|d| *d += g[0]));
            }
        }
        Op::Mean(x) => {
            if needs(*x) {
                let n = val(*x).len();
                let s = g[0] / n as f64;
                accumulate(grads, *x, n, |d| d.iter_mut().for_each(|d| *d += s));
            }
        }
        Op::LayerNormRows { x, inv_std } => {
            if needs(*x) {
                let y = &nodes[id].value;
                let c = y.cols();
                accumulate(grads, *x, y.len(), |dx| {
                    for (r, is) in inv_std.iter().enumerate() {
                        let yr = y.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let mean_g = gr.iter().sum::<f64>() / c as f64;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for ((d, gi), yi) in dx[r * c..(r + 1) * c].iter_mut().zip(gr).zip(yr) {
                            *d += is * (gi - mean_g - yi * mean_gy);
                        }
                    }
                });
            }
        }
        Op::CumMeanRows(x) => {
            if needs(*x) {
                let xv = val(*x);
                let (rows, c) = (xv.rows(), xv.cols());
                accumulate(grads, *x, xv.len(), |dx| {
                    let mut acc = vec![0.0; c];
                    for r in (0..rows).rev() {
                        let n = (r + 1) as f64;
                        for j in 0..c {
                            acc[j] += g[r * c + j] / n;
                            dx[r * c + j] += acc[j];
                        }
                    }
                });
            }
        }
        Op::WeightNormRows { v, g: gain, norms } => {
            let vv = val(*v);
            let gv = val(*gain);
            let c = vv.cols();
            if needs(*gain) {
                accumulate(grads, *gain, gv.len(), |dg| {
                    for (r, &norm) in norms.iter().enumerate() {
                        if norm > 0.0 {
                            let dot: f64 = g[r * c..(r + 1) * c]
                                .iter()
                                .zip(vv.row(r))
                                .map(|(a, b)| a * b)
                                .sum();
                            dg[r] += dot / norm;
                        }
                    }
                });
            }
            if needs(*v) {
                accumulate(grads, *v, vv.len(), |dv| {
                    for (r, &norm) in norms.iter().enumerate() {
                        if norm == 0.0 {
                            continue;
                        }
                        let vr = vv.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = gr.iter().zip(vr).map(|(a, b)| a * b).sum::<f64>() / norm;
                        let s = gv.data[r] / norm;
                        for ((d, gi), vi) in dv[r * c..(r + 1) * c].iter_mut().zip(gr).zip(vr) {
                            *d += s * (gi - dot * vi / norm);
                        }
                    }
                });
            }
        }
    }
}
