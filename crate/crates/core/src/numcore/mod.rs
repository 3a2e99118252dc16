//! Minimal differentiable numerics for the model: dense `f64` matrices, a
//! reverse-mode tape, Adam, and a finite-difference gradient checker.

mod gradcheck;
mod params;
mod tape;

use ndarray::Array2;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck, REL_ERROR_FLOOR};
pub use params::{adam_step, AdamConfig, Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};
use crate::hetgraph::Csr;

/// Dense row-major matrix; vectors are `1 x n` or `n x 1`.
pub type Tensor = Array2<f64>;

/// Variance guard for the correlation loss.
pub const PEARSON_EPS: f64 = 1e-8;

/// Row `u` is the mean of `x` over `adj.row(u)`; rows without neighbors are zero.
pub fn mean_aggregate(x: &Tensor, adj: &Csr) -> Result<Tensor> {
    if adj.n_cols() != x.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "adjacency has {} columns, input has {} rows",
            adj.n_cols(),
            x.nrows()
        )));
    }
    Ok(tape::mean_aggregate_kernel(x, adj))
}

/// `|cov(a, b)| / (sqrt(var a + eps) sqrt(var b + eps))` with population moments.
pub fn pearson_abs(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(
            "pearson correlation needs at least 2 coordinates".into(),
        ));
    }
    Ok(tape::pearson_abs_kernel(a, b, PEARSON_EPS))
}

/// `log(sigmoid(z))`, stable for large `|z|`.
pub fn log_sigmoid(z: f64) -> f64 {
    tape::log_sigmoid(z)
}

pub fn sigmoid(z: f64) -> f64 {
    tape::sigmoid(z)
}

/// Mean softmax cross-entropy of each row against its class index.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    if logits.nrows() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows, {} targets",
            logits.nrows(),
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= logits.ncols()) {
        return Err(Error::InvalidArgument(format!(
            "class {t} out of range for {} classes",
            logits.ncols()
        )));
    }
    Ok(tape::softmax_ce_kernel(logits, targets).0)
}

/// Mean element-wise binary cross-entropy of sigmoid(logits) against 0/1 targets.
pub fn sigmoid_bce(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    if logits.dim() != targets.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            logits.dim(),
            targets.dim()
        )));
    }
    let total: f64 = logits
        .iter()
        .zip(targets.iter())
        .map(|(&z, &y)| tape::softplus(z) - y * z)
        .sum();
    Ok(total / logits.len() as f64)
}
