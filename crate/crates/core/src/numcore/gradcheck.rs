//! Central-difference verification of tape gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Denominator floor for relative errors, so coordinates whose true gradient
/// is ~0 are judged on absolute error instead of round-off ratios.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates probed per tensor; tensors with fewer are checked fully.
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tol: 1e-4,
            coords_per_tensor: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tol: f64,
    pub loss: f64,
    pub params: Vec<ParamCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares tape gradients of `loss_fn` with central differences.
///
/// `loss_fn` records a scalar loss on a fresh tape from the given parameters;
/// it must be deterministic (freeze masks and RNG state outside of it).
pub fn grad_check<F>(store: &mut ParamStore, mut loss_fn: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    let loss_value = tape.scalar(loss);
    let grads = tape.backward(loss);
    store.zero_grad();
    tape.accumulate_param_grads(&grads, store);
    drop(tape);

    let mut eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = loss_fn(s, &mut t)?;
        Ok(t.scalar(l))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = Vec::new();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = if n <= opts.coords_per_tensor {
            (0..n).collect()
        } else {
            let mut c = index::sample(&mut rng, n, opts.coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        let analytic_grad = store.grad(id).clone();
        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            checked: coords.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for &flat in &coords {
            let original = store.value(id).as_slice().expect("parameters are contiguous")[flat];
            store.value_mut(id).as_slice_mut().unwrap()[flat] = original + opts.eps;
            let plus = eval(store)?;
            store.value_mut(id).as_slice_mut().unwrap()[flat] = original - opts.eps;
            let minus = eval(store)?;
            store.value_mut(id).as_slice_mut().unwrap()[flat] = original;

            let numeric = (plus - minus) / (2.0 * opts.eps);
            let analytic = analytic_grad.as_slice().unwrap()[flat];
            let err = relative_error(analytic, numeric);
            if err > check.max_rel_error || check.checked == 0 {
                check.max_rel_error = err;
                check.worst_index = flat;
                check.analytic = analytic;
                check.numeric = numeric;
            }
        }
        check.passed = check.max_rel_error <= opts.tol;
        params.push(check);
    }
    let passed = params.iter().all(|p| p.passed);
    Ok(GradCheckReport {
        eps: opts.eps,
        tol: opts.tol,
        loss: loss_value,
        params,
        passed,
    })
}
