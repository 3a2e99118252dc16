use rand::Rng;

use crate::error::{Error, Result};
use crate::hetgraph::{HetGraph, Split};
use crate::numcore::Tensor;

/// Which training labels are fed to the input in one pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMask {
    /// `kept[u]` is true iff node `u`'s label is injected.
    pub kept: Vec<bool>,
    /// `n_target x C`; row `u` is the (multi-)hot label of `u` if kept, else zero.
    pub rows: Tensor,
}

impl LabelMask {
    pub fn n_kept(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }
}

/// Draws, for every training node in id order, `keep ~ Bernoulli(1 - p)`.
///
/// Only training-split labels are read. `p = 0` keeps every training label
/// without consuming randomness.
pub fn sample_label_mask<R: Rng + ?Sized>(g: &HetGraph, p: f64, rng: &mut R) -> Result<LabelMask> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("label mask ratio {p} outside [0, 1]")));
    }
    let n = g.labels.n_nodes();
    let c = g.labels.num_classes;
    let mut kept = vec![false; n];
    let mut rows = Tensor::zeros((n, c));
    for u in g.splits.nodes(Split::Train) {
        let keep = if p == 0.0 { true } else { rng.random::<f64>() >= p };
        if keep {
            kept[u] = true;
            for &k in g.labels.classes_of(u) {
                rows[[u, k]] = 1.0;
            }
        }
    }
    Ok(LabelMask { kept, rows })
}

/// Eager form of the input augmentation: `x_u + W_y^T y_u` for kept nodes.
///
/// `w_y` is `C x dim(x)`; a multilabel node adds the sum of its class rows.
pub fn inject_labels<R: Rng + ?Sized>(
    x: &Tensor,
    g: &HetGraph,
    p: f64,
    w_y: &Tensor,
    rng: &mut R,
) -> Result<(Tensor, Vec<bool>)> {
    if w_y.dim() != (g.labels.num_classes, x.ncols()) || x.nrows() != g.labels.n_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "x is {:?}, label embedding is {:?}, {} labeled-type nodes",
            x.dim(),
            w_y.dim(),
            g.labels.n_nodes()
        )));
    }
    let mask = sample_label_mask(g, p, rng)?;
    Ok((x + &mask.rows.dot(w_y), mask.kept))
}
