//! Layer mathematics: valid convolution, full connection, activations and
//! MSE loss, forward and backward.
//!
//! Indices are 0-based. Every reduction runs in a fixed ascending index
//! order, and the single-entry kernels (`window_dot`, `grad_x_entry`, ...)
//! are the exact code paths the bulk functions use, so an auditor that
//! recomputes one entry gets a bit-identical value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {count} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("tensor values must be finite".into()));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let count = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; count],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn expect_shape(&self, want: &[usize], what: &str) -> Result<()> {
        if self.shape != want {
            return Err(Error::ShapeMismatch(format!(
                "{what}: expected {want:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub n_filters: usize,
    pub filter_side: usize,
    pub stride: usize,
    pub input_side: usize,
    pub eta: f64,
}

impl ConvSpec {
    pub fn output_side(&self) -> Result<usize> {
        conv_output_dim(self)
    }

    /// Side of a landmark block: the filter side rounded up to a stride multiple.
    pub fn landmark_side(&self) -> usize {
        self.stride * self.filter_side.div_ceil(self.stride)
    }
}

/// `floor(1 + (input_side - filter_side) / stride)`.
pub fn conv_output_dim(spec: &ConvSpec) -> Result<usize> {
    if spec.stride == 0 {
        return Err(Error::InvalidSpec("stride must be at least 1".into()));
    }
    if spec.filter_side == 0 || spec.n_filters == 0 {
        return Err(Error::InvalidSpec("empty filter bank".into()));
    }
    if spec.filter_side > spec.input_side {
        return Err(Error::InvalidSpec(format!(
            "filter side {} exceeds input side {}",
            spec.filter_side, spec.input_side
        )));
    }
    Ok(1 + (spec.input_side - spec.filter_side) / spec.stride)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcSpec {
    pub l_x: usize,
    pub l_y: usize,
    /// `l_x` rows by `l_y` columns, row-major.
    pub theta: Tensor,
    pub eta: f64,
}

impl FcSpec {
    pub fn new(theta: Tensor, eta: f64) -> Result<Self> {
        match *theta.shape() {
            [l_x, l_y] if l_x > 0 && l_y > 0 => Ok(FcSpec { l_x, l_y, theta, eta }),
            _ => Err(Error::ShapeMismatch(format!(
                "theta must be a non-empty matrix, got {:?}",
                theta.shape()
            ))),
        }
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.theta.values[row * self.l_y + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// `a'(x) * grad_out`; relu'(0) is 0.
    #[inline]
    pub fn backprop(self, x: f64, grad_out: f64) -> f64 {
        let d = match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = self.apply(x);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        };
        d * grad_out
    }
}

pub fn activation_apply(kind: Activation, x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        values: x.values.iter().map(|&v| kind.apply(v)).collect(),
    }
}

pub fn activation_grad(kind: Activation, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape != grad_out.shape {
        return Err(Error::ShapeMismatch("activation gradient shape".into()));
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        values: x
            .values
            .iter()
            .zip(&grad_out.values)
            .map(|(&v, &g)| kind.backprop(v, g))
            .collect(),
    })
}

/// Inner product of one receptive field with one filter, rows then columns.
#[inline]
pub fn window_dot(filter: &[f64], side: usize, x: impl Fn(usize, usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..side {
        for j in 0..side {
            acc += x(i, j) * filter[i * side + j];
        }
    }
    acc
}

fn check_conv_inputs(spec: &ConvSpec, x: &Tensor, filters: &[Tensor]) -> Result<usize> {
    let out = conv_output_dim(spec)?;
    x.expect_shape(&[spec.input_side, spec.input_side], "conv input")?;
    if filters.len() != spec.n_filters {
        return Err(Error::ShapeMismatch(format!(
            "expected {} filters, got {}",
            spec.n_filters,
            filters.len()
        )));
    }
    for f in filters {
        f.expect_shape(&[spec.filter_side, spec.filter_side], "filter")?;
    }
    Ok(out)
}

/// Output of shape `[n_filters, out, out]`.
pub fn conv_forward(spec: &ConvSpec, x: &Tensor, filters: &[Tensor]) -> Result<Tensor> {
    let out = check_conv_inputs(spec, x, filters)?;
    let (a, d, fs) = (spec.input_side, spec.stride, spec.filter_side);
    let xv = &x.values;
    let rows = par::map_range(spec.n_filters * out, |tr| {
        let (t, r) = (tr / out, tr % out);
        let f = &filters[t].values;
        (0..out)
            .map(|c| window_dot(f, fs, |i, j| xv[(r * d + i) * a + c * d + j]))
            .collect::<Vec<_>>()
    });
    Ok(Tensor {
        shape: vec![spec.n_filters, out, out],
        values: rows.concat(),
    })
}

/// `∇X^(t)[i,j]`: sum over output sites `(u,v)` whose receptive field covers
/// `(i,j)`, ascending `u` then `v`.
#[inline]
pub fn grad_x_entry(
    spec: &ConvSpec,
    out: usize,
    filter: &[f64],
    grad_y: impl Fn(usize, usize) -> f64,
    i: usize,
    j: usize,
) -> f64 {
    let (d, fs) = (spec.stride, spec.filter_side);
    let mut acc = 0.0;
    for u in contributing_outputs(i, d, fs, out) {
        let fi = i - u * d;
        for v in contributing_outputs(j, d, fs, out) {
            let fj = j - v * d;
            acc += grad_y(u, v) * filter[fi * fs + fj];
        }
    }
    acc
}

/// Output rows (or columns) `u` with `0 <= i - u*stride < filter_side`.
pub fn contributing_outputs(
    i: usize,
    stride: usize,
    filter_side: usize,
    out: usize,
) -> std::ops::Range<usize> {
    // u >= (i - fs + 1) / d rounded up, u <= i / d
    let lo = if i + 1 > filter_side {
        (i + 1 - filter_side).div_ceil(stride)
    } else {
        0
    };
    let hi = (i / stride + 1).min(out);
    lo..hi.max(lo)
}

/// One entry of an expanded filter-gradient vector:
/// `Σ_v ∇Y^(t)[u,v] · X[u·δ+i, v·δ+j]`, before the learning-rate factor.
#[inline]
pub fn grad_f_expanded_entry(
    spec: &ConvSpec,
    grad_y_row: &[f64],
    x: impl Fn(usize, usize) -> f64,
    i: usize,
    j: usize,
    u: usize,
) -> f64 {
    let d = spec.stride;
    let mut acc = 0.0;
    for (v, &g) in grad_y_row.iter().enumerate() {
        acc += g * x(u * d + i, v * d + j);
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvGrads {
    /// `[input_side, input_side]`
    pub grad_x: Tensor,
    /// One `[input_side, input_side]` tensor per filter.
    pub grad_x_per_filter: Vec<Tensor>,
    /// One `[filter_side, filter_side]` update per filter, learning rate applied.
    pub grad_f: Vec<Tensor>,
    /// One `[filter_side, filter_side, out]` tensor per filter, pre learning rate.
    pub grad_f_expanded: Vec<Tensor>,
}

/// Folds an expanded vector into a filter update: `-eta * Σ_u e[u]`.
#[inline]
pub fn fold_expanded(eta: f64, expanded: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &e in expanded {
        acc += e;
    }
    -eta * acc
}

/// Sums per-filter input gradients in ascending filter order.
pub fn sum_filter_grads(spec: &ConvSpec, per_filter: &[Tensor]) -> Tensor {
    let a = spec.input_side;
    let mut total = vec![0.0; a * a];
    for g in per_filter {
        for (acc, &v) in total.iter_mut().zip(&g.values) {
            *acc += v;
        }
    }
    Tensor {
        shape: vec![a, a],
        values: total,
    }
}

pub fn fold_filter_grads(spec: &ConvSpec, expanded: &[Tensor]) -> Vec<Tensor> {
    let fs = spec.filter_side;
    expanded
        .iter()
        .map(|e| {
            let out = e.shape[2];
            Tensor {
                shape: vec![fs, fs],
                values: e
                    .values
                    .chunks_exact(out)
                    .map(|vec_u| fold_expanded(spec.eta, vec_u))
                    .collect(),
            }
        })
        .collect()
}

pub fn conv_backward(
    spec: &ConvSpec,
    x: &Tensor,
    filters: &[Tensor],
    grad_y: &Tensor,
) -> Result<ConvGrads> {
    let out = check_conv_inputs(spec, x, filters)?;
    grad_y.expect_shape(&[spec.n_filters, out, out], "conv output gradient")?;
    let (a, fs) = (spec.input_side, spec.filter_side);
    let gy = &grad_y.values;
    let xv = &x.values;

    let grad_x_per_filter = par::map_range(spec.n_filters, |t| {
        let f = &filters[t].values;
        let g = &gy[t * out * out..(t + 1) * out * out];
        let mut vals = Vec::with_capacity(a * a);
        for i in 0..a {
            for j in 0..a {
                vals.push(grad_x_entry(spec, out, f, |u, v| g[u * out + v], i, j));
            }
        }
        Tensor {
            shape: vec![a, a],
            values: vals,
        }
    });

    let grad_f_expanded = par::map_range(spec.n_filters, |t| {
        let g = &gy[t * out * out..(t + 1) * out * out];
        let mut vals = Vec::with_capacity(fs * fs * out);
        for i in 0..fs {
            for j in 0..fs {
                for u in 0..out {
                    let row = &g[u * out..(u + 1) * out];
                    vals.push(grad_f_expanded_entry(
                        spec,
                        row,
                        |r, c| xv[r * a + c],
                        i,
                        j,
                        u,
                    ));
                }
            }
        }
        Tensor {
            shape: vec![fs, fs, out],
            values: vals,
        }
    });

    let grad_x = sum_filter_grads(spec, &grad_x_per_filter);
    let grad_f = fold_filter_grads(spec, &grad_f_expanded);
    Ok(ConvGrads {
        grad_x,
        grad_x_per_filter,
        grad_f,
        grad_f_expanded,
    })
}

/// `Y = Θᵀ X`, each output summed over ascending input index.
pub fn fc_forward(spec: &FcSpec, x: &Tensor) -> Result<Tensor> {
    x.expect_shape(&[spec.l_x], "fc input")?;
    let values = (0..spec.l_y)
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..spec.l_x {
                acc += spec.weight(j, i) * x.values[j];
            }
            acc
        })
        .collect();
    Ok(Tensor::vector(values))
}

/// Returns `(∇X, ∇Θ)` with `∇X = Θ ∇Y` and `∇Θ[j,i] = -eta ∇Y[i] X[j]`.
pub fn fc_backward(spec: &FcSpec, x: &Tensor, grad_y: &Tensor) -> Result<(Tensor, Tensor)> {
    x.expect_shape(&[spec.l_x], "fc input")?;
    grad_y.expect_shape(&[spec.l_y], "fc output gradient")?;
    let grad_x = (0..spec.l_x)
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..spec.l_y {
                acc += spec.weight(j, i) * grad_y.values[i];
            }
            acc
        })
        .collect();
    let mut grad_theta = Vec::with_capacity(spec.l_x * spec.l_y);
    for j in 0..spec.l_x {
        for i in 0..spec.l_y {
            grad_theta.push(weight_update(spec.eta, grad_y.values[i], x.values[j]));
        }
    }
    Ok((
        Tensor::vector(grad_x),
        Tensor {
            shape: vec![spec.l_x, spec.l_y],
            values: grad_theta,
        },
    ))
}

#[inline]
pub fn weight_update(eta: f64, grad_y: f64, x: f64) -> f64 {
    -eta * grad_y * x
}

/// Splits a length into `(parts, part_len)` where `parts` is the divisor of
/// `len` nearest `sqrt(len)`, ties toward the smaller divisor.
pub fn split_near_sqrt(len: usize) -> (usize, usize) {
    assert!(len > 0, "cannot split an empty vector");
    let root = (len as f64).sqrt();
    let mut best = 1;
    let mut best_gap = f64::INFINITY;
    for d in 1..=len {
        if len.is_multiple_of(d) {
            let gap = (d as f64 - root).abs();
            if gap < best_gap {
                best = d;
                best_gap = gap;
            }
        }
    }
    (best, len / best)
}

/// Ascending-order inner product used for every hierarchical partial sum.
#[inline]
pub fn partial_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, w) in a.iter().zip(b) {
        acc += x * w;
    }
    acc
}

/// Sums a row of partial sums in ascending order.
#[inline]
pub fn row_sum(row: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &v in row {
        acc += v;
    }
    acc
}

/// `(loss, ∂loss/∂ŷ)` for mean squared error.
pub fn loss_eval(yhat: &Tensor, y: &Tensor) -> Result<(f64, Tensor)> {
    if yhat.len() != y.len() || yhat.is_empty() {
        return Err(Error::ShapeMismatch("loss operands".into()));
    }
    let n = yhat.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(yhat.len());
    for (&p, &t) in yhat.values.iter().zip(&y.values) {
        let diff = p - t;
        loss += diff * diff;
        grad.push(2.0 / n * diff);
    }
    Ok((loss / n, Tensor::vector(grad)))
}
