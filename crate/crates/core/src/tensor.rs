//! Dense row-major `f64` tensors.
//!
//! Feature maps use the rank-5 layout `(batch, channel, time, height, width)`,
//! convolution kernels `(out, in, kT, kH, kW)` and biases rank 1. Arithmetic
//! never broadcasts implicitly; [`Tensor::broadcast_to`] is the only way to
//! expand size-1 axes.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

impl Tensor {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                op: "from_vec",
                detail: format!("zero-sized axis in {shape:?}"),
            });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape {
                op: "from_vec",
                detail: format!("shape {shape:?} holds {n} elements, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        assert!(shape.iter().all(|&d| d > 0), "zero-sized axis in {shape:?}");
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.shape.clone())
    }

    /// Samples every element uniformly from `[low, high)`.
    pub fn uniform<R: Rng + ?Sized>(
        shape: impl Into<Vec<usize>>,
        low: f64,
        high: f64,
        rng: &mut R,
    ) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = rng.random_range(low..high);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// The shape as a fixed `(B, C, T, H, W)` array, failing for other ranks.
    pub fn dims5(&self) -> Result<[usize; 5]> {
        <[usize; 5]>::try_from(self.shape.as_slice()).map_err(|_| Error::InvalidShape {
            op: "dims5",
            detail: format!("expected a rank-5 tensor, got shape {:?}", self.shape),
        })
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn into_reshape(self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[flatten_index(&self.shape, index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let i = flatten_index(&self.shape, index);
        self.data[i] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape("dot", other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(BinaryOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(BinaryOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(BinaryOp::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(BinaryOp::Div, self, other)
    }

    /// `self += other`, in place.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Expands size-1 axes of `self` to match `shape` (equal rank required).
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        let bad = self.rank() != shape.len()
            || self
                .shape
                .iter()
                .zip(shape)
                .any(|(&have, &want)| have != want && have != 1);
        if bad {
            return Err(Error::ShapeMismatch {
                op: "broadcast_to",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        let mut out = Tensor::zeros(shape.to_vec());
        let mut index = vec![0; shape.len()];
        for flat in 0..out.len() {
            unflatten_into(shape, flat, &mut index);
            let src: usize = index
                .iter()
                .zip(&self.shape)
                .zip(strides(&self.shape))
                .map(|((&i, &d), s)| if d == 1 { 0 } else { i * s })
                .sum();
            out.data[flat] = self.data[src];
        }
        Ok(out)
    }

    pub(crate) fn check_same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }
}

/// Applies a binary operator componentwise. Shapes must match exactly.
pub fn elementwise(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_same_shape("elementwise", b)?;
    let f: fn(f64, f64) -> f64 = match op {
        BinaryOp::Add => |x, y| x + y,
        BinaryOp::Sub => |x, y| x - y,
        BinaryOp::Mul => |x, y| x * y,
        BinaryOp::Div => |x, y| x / y,
    };
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    })
}

/// Reduces `x` over `axes`. Reduced axes are dropped unless `keep_dims`, in
/// which case they stay with size 1. An empty axis set returns a copy.
pub fn reduce(kind: ReduceOp, x: &Tensor, axes: &[usize], keep_dims: bool) -> Result<Tensor> {
    if axes.is_empty() {
        return Ok(x.clone());
    }
    let rank = x.rank();
    let mut reduced = vec![false; rank];
    for &axis in axes {
        if axis >= rank || reduced[axis] {
            return Err(Error::InvalidArgument(format!(
                "reduce axes {axes:?} invalid for shape {:?}",
                x.shape
            )));
        }
        reduced[axis] = true;
    }
    let kept_shape: Vec<usize> = x
        .shape
        .iter()
        .zip(&reduced)
        .map(|(&d, &r)| if r { 1 } else { d })
        .collect();
    let init = match kind {
        ReduceOp::Max => f64::NEG_INFINITY,
        ReduceOp::Sum | ReduceOp::Mean => 0.0,
    };
    let mut out = vec![init; kept_shape.iter().product()];
    let out_strides = strides(&kept_shape);
    let mut index = vec![0; rank];
    for (flat, &v) in x.data.iter().enumerate() {
        unflatten_into(&x.shape, flat, &mut index);
        let dst: usize = index
            .iter()
            .zip(&reduced)
            .zip(&out_strides)
            .map(|((&i, &r), &s)| if r { 0 } else { i * s })
            .sum();
        match kind {
            ReduceOp::Max => out[dst] = out[dst].max(v),
            ReduceOp::Sum | ReduceOp::Mean => out[dst] += v,
        }
    }
    if kind == ReduceOp::Mean {
        let count: usize = axes.iter().map(|&a| x.shape[a]).product();
        let count = count as f64;
        out.iter_mut().for_each(|v| *v /= count);
    }
    let shape = if keep_dims {
        kept_shape
    } else {
        x.shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect()
    };
    Tensor::from_vec(shape, out)
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub fn flatten_index(shape: &[usize], index: &[usize]) -> usize {
    debug_assert_eq!(shape.len(), index.len());
    index.iter().zip(shape).fold(0, |acc, (&i, &d)| {
        debug_assert!(i < d, "index {index:?} out of bounds for {shape:?}");
        acc * d + i
    })
}

pub fn unflatten_index(shape: &[usize], flat: usize) -> Vec<usize> {
    let mut index = vec![0; shape.len()];
    unflatten_into(shape, flat, &mut index);
    index
}

fn unflatten_into(shape: &[usize], mut flat: usize, index: &mut [usize]) {
    for (slot, &d) in index.iter_mut().zip(shape).rev() {
        *slot = flat % d;
        flat /= d;
    }
}

/// Central finite-difference gradient of a scalar function.
///
/// Each element `i` gets `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
/// This is the reference every analytic backward pass is checked against.
pub fn finite_difference_grad<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros_like(x);
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "function value at perturbation index {i} ({plus}, {minus})"
            )));
        }
        grad.data[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// Compares an analytic gradient against a numeric one using
/// `|a - n| <= atol + rtol * |n|` elementwise; returns the worst offender.
pub fn check_close(analytic: &Tensor, numeric: &Tensor, rtol: f64, atol: f64) -> Result<()> {
    analytic.check_same_shape("check_close", numeric)?;
    let mut worst: Option<(usize, f64, f64, f64)> = None;
    for (i, (&a, &n)) in analytic.data.iter().zip(&numeric.data).enumerate() {
        let excess = (a - n).abs() - (atol + rtol * n.abs());
        if excess > 0.0 || !a.is_finite() {
            if worst.is_none_or(|w| excess > w.3) {
                worst = Some((i, a, n, excess));
            }
        }
    }
    match worst {
        None => Ok(()),
        Some((i, a, n, _)) => Err(Error::InvalidArgument(format!(
            "gradient mismatch at element {i}: analytic {a}, numeric {n}"
        ))),
    }
}

/// Which learning rate a parameter trains with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Encoder,
    Decoder,
}

/// A trainable tensor with its gradient accumulator and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, group: ParamGroup, value: Tensor) -> Self {
        let grad = Tensor::zeros_like(&value);
        let momentum = Tensor::zeros_like(&value);
        Self {
            name: name.into(),
            group,
            value,
            grad,
            momentum,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}
