use std::sync::Arc;

use rand::Rng;

use super::{glorot, Channel, ForwardOutput, ModelParams, Reduction};
use crate::error::{Error, Result};
use crate::hetgraph::HetGraph;
use crate::metapath::PathPair;
use crate::numcore::{ParamId, ParamStore, Tape, Tensor, Var, PEARSON_EPS};

/// Bias-free pair decoder `f(a, b) = ReLU((a ∘ b) W0) W1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decoder {
    /// `d_h x d_h`.
    pub w0: ParamId,
    /// `d_h x 1`.
    pub w1: ParamId,
}

impl Decoder {
    pub(crate) fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut R) -> Self {
        Decoder {
            w0: store.add(format!("{prefix}.w0"), glorot(d, d, rng)),
            w1: store.add(format!("{prefix}.w1"), glorot(d, 1, rng)),
        }
    }

    /// `m x 1` logits for row-aligned endpoint representations.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, a: Var, b: Var) -> Var {
        let prod = tape.mul(a, b);
        let w0 = tape.param(store, self.w0);
        let hidden = tape.matmul(prod, w0);
        let hidden = tape.relu(hidden);
        let w1 = tape.param(store, self.w1);
        tape.matmul(hidden, w1)
    }
}

/// Per-node `|pearson(h_homo_u, h_hetero_u)|` over the feature coordinates,
/// reduced by mean or sum.
pub fn correlation_loss(tape: &mut Tape, homo: Var, hetero: Var, reduction: Reduction) -> Result<Var> {
    let (a, b) = (tape.value(homo).dim(), tape.value(hetero).dim());
    if a != b {
        return Err(Error::ShapeMismatch(format!("channels are {a:?} and {b:?}")));
    }
    if a.1 < 2 {
        return Err(Error::InvalidArgument(format!(
            "correlation needs at least 2 dimensions, got {}",
            a.1
        )));
    }
    let per_node = tape.row_pearson_abs(homo, hetero, PEARSON_EPS);
    Ok(match reduction {
        Reduction::Mean => tape.mean(per_node),
        Reduction::Sum => tape.sum(per_node),
    })
}

/// Eager correlation loss: `(sum over nodes, per-node mean)`.
pub fn correlation_loss_value(homo: &Tensor, hetero: &Tensor) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let a = tape.constant(homo.clone());
    let b = tape.constant(hetero.clone());
    let s = correlation_loss(&mut tape, a, b, Reduction::Sum)?;
    let total = tape.scalar(s);
    Ok((total, total / homo.nrows().max(1) as f64))
}

fn endpoint_rows(pairs: &[PathPair], g: &HetGraph, offsets: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut src = Vec::with_capacity(pairs.len());
    let mut dst = Vec::with_capacity(pairs.len());
    for p in pairs {
        for (end, out) in [(p.src, &mut src), (p.dst, &mut dst)] {
            let t = g
                .node_types
                .get(end.ty)
                .ok_or_else(|| Error::InvalidArgument(format!("pair endpoint has unknown type index {}", end.ty)))?;
            if end.id >= t.count {
                return Err(Error::IdOutOfRange {
                    what: format!("pair endpoint of type {}", t.name),
                    id: end.id,
                    bound: t.count,
                });
            }
            out.push(offsets[end.ty] + end.id);
        }
        let (s, d) = g.endpoint_types(p.relation);
        if (s, d) != (p.src.ty, p.dst.ty) {
            return Err(Error::InvalidArgument(format!(
                "pair endpoints of types ({}, {}) do not match relation {}",
                g.node_types[p.src.ty].name, g.node_types[p.dst.ty].name, g.relations[p.relation].name
            )));
        }
    }
    Ok((src, dst))
}

/// Mean of `log σ(sign · f(h_u, h_v))` over `pairs` in one channel.
fn pair_term(
    tape: &mut Tape,
    params: &ModelParams,
    all_rows: Var,
    rows: &(Vec<usize>, Vec<usize>),
    decoder: &Decoder,
    sign: f64,
) -> Var {
    let a = tape.gather_rows(all_rows, Arc::new(rows.0.clone()));
    let b = tape.gather_rows(all_rows, Arc::new(rows.1.clone()));
    let z = decoder.logits(tape, &params.store, a, b);
    let z = if sign < 0.0 { tape.scale(z, -1.0) } else { z };
    let ls = tape.log_sigmoid(z);
    tape.mean(ls)
}

/// Masked-path reconstruction loss.
///
/// `-(mean_{ρ⁺} log σ(f(homo)) + mean_{ρ⁻} log σ(f(hetero)))`, plus with
/// `contrastive` the target-0 terms `-mean_{ρ⁻} log(1 - σ(f(homo)))
/// - mean_{ρ⁺} log(1 - σ(f(hetero)))`. An empty pair set contributes 0.
pub fn reconstruction_loss(
    tape: &mut Tape,
    g: &HetGraph,
    out: &ForwardOutput,
    params: &ModelParams,
    rho_plus: &[PathPair],
    rho_minus: &[PathPair],
    contrastive: bool,
) -> Result<Var> {
    let offsets = g.type_offsets();
    if rho_plus.is_empty() {
        log::warn!("reconstruction: no positive pairs; positive term is 0");
    }
    if rho_minus.is_empty() {
        log::warn!("reconstruction: no negative pairs; negative term is 0");
    }
    let plus = endpoint_rows(rho_plus, g, &offsets)?;
    let minus = endpoint_rows(rho_minus, g, &offsets)?;

    let mut terms = Vec::new();
    if !rho_plus.is_empty() || !rho_minus.is_empty() {
        let homo_all = tape.concat_rows(&out.homo);
        let hetero_all = tape.concat_rows(&out.hetero);
        let (dh, dx) = (*params.decoder(Channel::Homo), *params.decoder(Channel::Hetero));
        if !rho_plus.is_empty() {
            terms.push(pair_term(tape, params, homo_all, &plus, &dh, 1.0));
            if contrastive {
                terms.push(pair_term(tape, params, hetero_all, &plus, &dx, -1.0));
            }
        }
        if !rho_minus.is_empty() {
            terms.push(pair_term(tape, params, hetero_all, &minus, &dx, 1.0));
            if contrastive {
                terms.push(pair_term(tape, params, homo_all, &minus, &dh, -1.0));
            }
        }
    }
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::zeros((1, 1))));
    }
    let s = tape.add_all(&terms);
    Ok(tape.scale(s, -1.0))
}

/// Mean classification loss of `logits` over `nodes`: softmax cross-entropy,
/// or element-averaged sigmoid BCE when `multilabel`.
pub fn classification_loss(
    tape: &mut Tape,
    g: &HetGraph,
    logits: Var,
    nodes: &[usize],
    multilabel: bool,
) -> Result<Var> {
    if nodes.is_empty() {
        return Err(Error::Data("classification loss over an empty node set".into()));
    }
    let c = tape.value(logits).ncols();
    let rows = tape.gather_rows(logits, Arc::new(nodes.to_vec()));
    if multilabel {
        let mut y = Tensor::zeros((nodes.len(), c));
        for (i, &u) in nodes.iter().enumerate() {
            for &k in g.labels.classes_of(u) {
                y[[i, k]] = 1.0;
            }
        }
        Ok(tape.sigmoid_bce(rows, Arc::new(y)))
    } else {
        let targets = nodes
            .iter()
            .map(|&u| g.labels.class_of(u).ok_or(Error::UnlabeledSplitMember(u)))
            .collect::<Result<Vec<_>>>()?;
        Ok(tape.softmax_cross_entropy(rows, Arc::new(targets)))
    }
}

/// `J = L_cls + α L_corr + β L_rec` on the tape; non-finite components fail.
pub fn total_loss(tape: &mut Tape, cls: Var, corr: Var, rec: Var, alpha: f64, beta: f64) -> Result<Var> {
    total_loss_value(tape.scalar(cls), tape.scalar(corr), tape.scalar(rec), alpha, beta)?;
    let a = tape.scale(corr, alpha);
    let b = tape.scale(rec, beta);
    Ok(tape.add_all(&[cls, a, b]))
}

pub fn total_loss_value(cls: f64, corr: f64, rec: f64, alpha: f64, beta: f64) -> Result<f64> {
    for (name, v) in [("L_cls", cls), ("L_corr", corr), ("L_rec", rec)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v}")));
        }
    }
    Ok(cls + alpha * corr + beta * rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn correlation_examples() {
        let h = array![[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]];
        let (sum, mean) = correlation_loss_value(&h, &h).unwrap();
        assert!((sum - 2.0).abs() < 1e-6 && (mean - 1.0).abs() < 1e-6);
        let a = array![[1.0, 0.0, -1.0, 0.0], [1.0, 0.0, -1.0, 0.0]];
        let b = array![[0.0, 1.0, 0.0, -1.0], [0.0, 1.0, 0.0, -1.0]];
        assert_eq!(correlation_loss_value(&a, &b).unwrap().0, 0.0);
        assert!(correlation_loss_value(&array![[1.0]], &array![[2.0]]).is_err());
    }

    #[test]
    fn scalar_decoder_example() {
        let mut s = ParamStore::new();
        let d = Decoder {
            w0: s.add("w0", array![[2.0]]),
            w1: s.add("w1", array![[3.0]]),
        };
        let mut t = Tape::new();
        let a = t.constant(array![[1.0]]);
        let b = t.constant(array![[0.5]]);
        let z = d.logits(&mut t, &s, a, b);
        assert_eq!(t.scalar(z), 3.0);
        let ls = t.log_sigmoid(z);
        assert!((-t.scalar(ls) - 0.048587351573742).abs() < 1e-12);
    }

    #[test]
    fn zero_endpoint_gives_zero_logit() {
        let mut s = ParamStore::new();
        let d = Decoder {
            w0: s.add("w0", array![[1.3, -0.2], [0.4, 2.0]]),
            w1: s.add("w1", array![[0.7], [-1.1]]),
        };
        let mut t = Tape::new();
        let a = t.constant(array![[0.0, 0.0]]);
        let b = t.constant(array![[4.0, -3.0]]);
        let z = d.logits(&mut t, &s, a, b);
        assert_eq!(t.scalar(z), 0.0);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss_value(1.3, 7.0, 9.0, 0.0, 0.0).unwrap(), 1.3);
        assert!((total_loss_value(1.0, 0.5, 2.0, 0.1, 0.2).unwrap() - 1.45).abs() < 1e-15);
        assert_eq!(total_loss_value(0.0, 0.0, 0.0, 0.3, 0.3).unwrap(), 0.0);
        assert!(total_loss_value(f64::NAN, 0.0, 0.0, 0.1, 0.1).is_err());
        assert!(total_loss_value(0.0, f64::INFINITY, 0.0, 0.1, 0.1).is_err());
    }
}
