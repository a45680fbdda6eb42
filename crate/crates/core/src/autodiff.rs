//! Dense reverse-mode automatic differentiation over `f64` tensors.
//!
//! The tape is define-by-run: every primitive call evaluates eagerly, appends
//! a node holding its value, and records its parents. Parents always precede
//! children, so `backward` is a single reverse sweep.
//!
//! Binary elementwise primitives broadcast numpy-style (trailing dimensions
//! aligned, extent-1 dimensions stretched).

use log::warn;

use crate::error::{Error, Result};

/// Negative-side slope of the leaky ReLU activation.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Row-major dense tensor of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidArgument(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
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

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Stacks equally long rows into a `[rows.len(), width]` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            let row = row.as_ref();
            if row.len() != width {
                return Err(Error::dim("row width", width, row.len()));
            }
            data.extend_from_slice(row);
        }
        Tensor::matrix(rows.len(), width, data)
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Leading extent of a matrix (1 for lower ranks).
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Trailing extent (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Gathers the given rows of a matrix into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![idx.len(), c],
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Tanh(Var),
    LeakyRelu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var),
    BroadcastTo(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Clamp(Var, f64, f64),
    SliceCols(Var, usize, usize),
    LogMixExp(Var, Var, Vec<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Tanh(_) => "tanh",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::BroadcastTo(_) => "broadcast_to",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Clamp(..) => "clamp",
            Op::SliceCols(..) => "slice_cols",
            Op::LogMixExp(..) => "log_mix_exp",
        }
    }

    fn parents(&self) -> (Option<Var>, Option<Var>) {
        match *self {
            Op::Leaf => (None, None),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => (Some(a), Some(b)),
            Op::LogMixExp(a, b, _) => (Some(a), Some(b)),
            Op::Tanh(a)
            | Op::LeakyRelu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumAxis(a)
            | Op::BroadcastTo(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Clamp(a, ..)
            | Op::SliceCols(a, ..) => (Some(a), None),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient (data, noise, fixed weights).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name(),
                node: id,
            });
        }
        let (a, b) = op.parents();
        let needs_grad = a.is_some_and(|p| self.nodes[p.0].needs_grad)
            || b.is_some_and(|p| self.nodes[p.0].needs_grad);
        Ok(self.push_unchecked(value, op, needs_grad))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape == tb.shape {
            return Ok(ta.zip(tb, f));
        }
        let shape = broadcast_shape(&ta.shape, &tb.shape).ok_or_else(|| Error::ShapeMismatch {
            op: name,
            left: ta.shape.clone(),
            right: tb.shape.clone(),
        })?;
        let mut out = Tensor::zeros(&shape);
        let sa = broadcast_strides(&ta.shape, &shape);
        let sb = broadcast_strides(&tb.shape, &shape);
        for_each_broadcast(&shape, &sa, &sb, |o, i, j| {
            out.data[o] = f(ta.data[i], tb.data[j]);
        });
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(v, Op::Mul(a, b))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut out = vec![0.0; m * n];
        matmul_nn(&ta.data, &tb.data, &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.nodes[a.0].value.map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var) -> Result<Var> {
        let v = self.nodes[a.0]
            .value
            .map(|x| if x > 0.0 { x } else { LEAKY_SLOPE * x });
        self.push(v, Op::LeakyRelu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.nodes[a.0].value.map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.nodes[a.0].value.map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.nodes[a.0].value.map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.is_empty() {
            return Err(Error::InvalidArgument("mean of an empty tensor".into()));
        }
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Sums over one axis, keeping it with extent 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if axis >= t.shape.len() {
            return Err(Error::InvalidArgument(format!(
                "sum_axis: axis {axis} out of range for shape {:?}",
                t.shape
            )));
        }
        let mut shape = t.shape.clone();
        shape[axis] = 1;
        let out = reduce_to(t, &shape);
        self.push(out, Op::SumAxis(a))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        match broadcast_shape(&t.shape, shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "broadcast_to",
                    left: t.shape.clone(),
                    right: shape.to_vec(),
                })
            }
        }
        let mut out = Tensor::zeros(shape);
        let sa = broadcast_strides(&t.shape, shape);
        for_each_broadcast(shape, &sa, &sa, |o, i, _| out.data[o] = t.data[i]);
        self.push(out, Op::BroadcastTo(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.nodes[a.0].value.map(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.nodes[a.0].value.map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Clamps into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = self.nodes[a.0].value.map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.shape.len() != 2 || start >= end || end > t.shape[1] {
            return Err(Error::InvalidArgument(format!(
                "slice_cols {start}..{end} on shape {:?}",
                t.shape
            )));
        }
        let (rows, cols) = (t.shape[0], t.shape[1]);
        let width = end - start;
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&t.data[r * cols + start..r * cols + end]);
        }
        self.push(Tensor::matrix(rows, width, data)?, Op::SliceCols(a, start, end))
    }

    /// Elementwise `ln(w * exp(a) + (1 - w) * exp(b))` for constant weights
    /// `w` in `[0, 1]`. A weight of exactly 0 or 1 returns `b` or `a` bit-for-bit.
    pub fn log_mix_exp(&mut self, a: Var, b: Var, weights: &[f64]) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape != tb.shape || weights.len() != ta.len() {
            return Err(Error::ShapeMismatch {
                op: "log_mix_exp",
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidArgument(format!(
                "log_mix_exp weight {w} outside [0, 1]"
            )));
        }
        let data = ta
            .data
            .iter()
            .zip(&tb.data)
            .zip(weights)
            .map(|((&x, &y), &w)| log_mix_exp(x, y, w))
            .collect();
        let v = Tensor::new(ta.shape.clone(), data)?;
        self.push(v, Op::LogMixExp(a, b, weights.to_vec()))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::NotScalar(out.shape.clone()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(&out.shape, 1.0));

        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, g) {
                (Op::Leaf, g) if node.needs_grad => {
                    Some(g.unwrap_or_else(|| Tensor::zeros(&node.value.shape)))
                }
                (_, g) => g,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &self.nodes[id].value;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, reduce_to(g, &val(*a).shape));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, reduce_to(g, &val(*b).shape));
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, reduce_to(g, &val(*a).shape));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, reduce_to(&g.map(|x| -x), &val(*b).shape));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if self.needs(*a) {
                    let prod = broadcast_product(g, tb);
                    accumulate(grads, *a, reduce_to(&prod, &ta.shape));
                }
                if self.needs(*b) {
                    let prod = broadcast_product(g, ta);
                    accumulate(grads, *b, reduce_to(&prod, &tb.shape));
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt(&g.data, &tb.data, &mut da, m, n, k);
                    accumulate(grads, *a, Tensor { shape: ta.shape.clone(), data: da });
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_tn(&ta.data, &g.data, &mut db, m, k, n);
                    accumulate(grads, *b, Tensor { shape: tb.shape.clone(), data: db });
                }
            }
            Op::Tanh(a) => {
                accumulate(grads, *a, g.zip(y, |gi, yi| gi * (1.0 - yi * yi)));
            }
            Op::LeakyRelu(a) => {
                let d = g.zip(val(*a), |gi, xi| if xi > 0.0 { gi } else { LEAKY_SLOPE * gi });
                accumulate(grads, *a, d);
            }
            Op::Exp(a) => accumulate(grads, *a, g.zip(y, |gi, yi| gi * yi)),
            Op::Log(a) => accumulate(grads, *a, g.zip(val(*a), |gi, xi| gi / xi)),
            Op::Square(a) => accumulate(grads, *a, g.zip(val(*a), |gi, xi| 2.0 * gi * xi)),
            Op::Sum(a) => {
                let gs = g.data[0];
                accumulate(grads, *a, Tensor::full(&val(*a).shape, gs));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let gs = g.data[0] / t.len() as f64;
                accumulate(grads, *a, Tensor::full(&t.shape, gs));
            }
            Op::SumAxis(a) | Op::BroadcastTo(a) => {
                let t = val(*a);
                let target = y.shape.clone();
                // sum_axis: stretch g back; broadcast_to: reduce g down.
                let d = if t.len() >= target.iter().product() {
                    let mut out = Tensor::zeros(&t.shape);
                    let sg = broadcast_strides(&target, &t.shape);
                    for_each_broadcast(&t.shape, &sg, &sg, |o, i, _| out.data[o] = g.data[i]);
                    out
                } else {
                    reduce_to(g, &t.shape)
                };
                accumulate(grads, *a, d);
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|gi| c * gi)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Clamp(a, lo, hi) => {
                let d = g.zip(val(*a), |gi, xi| if xi >= *lo && xi <= *hi { gi } else { 0.0 });
                accumulate(grads, *a, d);
            }
            Op::SliceCols(a, start, end) => {
                let t = val(*a);
                let (rows, cols) = (t.shape[0], t.shape[1]);
                let width = end - start;
                let mut d = Tensor::zeros(&t.shape);
                for r in 0..rows {
                    d.data[r * cols + start..r * cols + end]
                        .copy_from_slice(&g.data[r * width..(r + 1) * width]);
                }
                accumulate(grads, *a, d);
            }
            Op::LogMixExp(a, b, w) => {
                let (ta, tb) = (val(*a), val(*b));
                let mut da = Vec::with_capacity(g.len());
                let mut db = Vec::with_capacity(g.len());
                for i in 0..g.len() {
                    let (wa, wb) = log_mix_exp_weights(ta.data[i], tb.data[i], y.data[i], w[i]);
                    da.push(g.data[i] * wa);
                    db.push(g.data[i] * wb);
                }
                if self.needs(*a) {
                    accumulate(grads, *a, Tensor { shape: ta.shape.clone(), data: da });
                }
                if self.needs(*b) {
                    accumulate(grads, *b, Tensor { shape: tb.shape.clone(), data: db });
                }
            }
        }
    }
}

/// Gradients of a scalar with respect to every tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`. Differentiable leaves not reached by the output get
    /// zeros; constants and unreached interior nodes return `None`.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, contribution: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.data.iter_mut().zip(&contribution.data) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

/// Numerically stable `ln(w e^a + (1-w) e^b)`.
pub fn log_mix_exp(a: f64, b: f64, w: f64) -> f64 {
    if w == 0.0 {
        b
    } else if w == 1.0 {
        a
    } else if a == b {
        a
    } else {
        let m = a.max(b);
        (w * (a - m).exp() + (1.0 - w) * (b - m).exp()).ln() + m
    }
}

fn log_mix_exp_weights(a: f64, b: f64, y: f64, w: f64) -> (f64, f64) {
    if w == 0.0 {
        (0.0, 1.0)
    } else if w == 1.0 {
        (1.0, 0.0)
    } else if a == b {
        (w, 1.0 - w)
    } else {
        (w * (a - y).exp(), (1.0 - w) * (b - y).exp())
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` (0 along stretched axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

fn for_each_broadcast(
    shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = shape.iter().product();
    if total == 0 {
        return;
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            ia -= sa[d] * shape[d];
            ib -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

/// Sums `g` down to `shape` (inverse of broadcasting).
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape);
    let so = broadcast_strides(shape, &g.shape);
    for_each_broadcast(&g.shape, &so, &so, |i, j, _| out.data[j] += g.data[i]);
    out
}

/// `g * t` where `t` broadcasts up to `g`'s shape.
fn broadcast_product(g: &Tensor, t: &Tensor) -> Tensor {
    if g.shape == t.shape {
        return g.zip(t, |a, b| a * b);
    }
    let mut out = Tensor::zeros(&g.shape);
    let st = broadcast_strides(&t.shape, &g.shape);
    let sg = broadcast_strides(&g.shape, &g.shape);
    for_each_broadcast(&g.shape, &sg, &st, |o, i, j| out.data[o] = g.data[i] * t.data[j]);
    out
}

/// `c[m,n] = a[m,k] * b[k,n]`.
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj += aip * bj;
            }
        }
    }
}

/// `c[m,k] = a[m,n] * b[k,n]^T`.
fn matmul_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            c[i * k + p] = dot(a_row, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `c[k,n] = a[m,k]^T * b[m,n]`.
fn matmul_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj += aip * bj;
            }
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = x.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += x[4 * c + l] * y[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..x.len() {
        s += x[i] * y[i];
    }
    s
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    Skipped,
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Vec<f64>> = params.into_iter().map(|p| vec![0.0; p.len()]).collect();
        let second = first.clone();
        AdamState {
            config,
            first,
            second,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Descends along `grads`. A non-finite gradient skips the whole step.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<StepOutcome> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::dim("adam parameter count", self.first.len(), params.len()));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.len() != m.len() || g.shape != p.shape {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape.clone(),
                    right: g.shape.clone(),
                });
            }
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            warn!("adam: non-finite gradient in parameter {i}, step skipped");
            return Ok(StepOutcome::Skipped);
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..g.data.len() {
                let gj = g.data[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.data[j] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(StepOutcome::Applied)
    }
}
