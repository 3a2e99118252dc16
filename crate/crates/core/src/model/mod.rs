//! Two-channel relational message-passing network.
//!
//! Every relation is a view with its own weights in each of two channels
//! (`homo`, `hetero`). Per layer, a node's representation in each view is
//! `ReLU(h_u W_self + mean_{v in N_u} h_v W_nbr)` (no ReLU on the last layer),
//! and the views sharing a source type are fused channel-wise. The target
//! type is classified from `h_homo + h_hetero`.

mod checkpoint;
mod forward;
mod labels;
mod loss;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_params, read_checkpoint, save_params, write_checkpoint, CHECKPOINT_MAGIC};
pub use forward::{forward, ForwardOutput};
pub use labels::{inject_labels, sample_label_mask, LabelMask};
pub use loss::{
    classification_loss, correlation_loss, correlation_loss_value, reconstruction_loss, total_loss, total_loss_value,
    Decoder,
};

use crate::error::{Error, Result};
use crate::hetgraph::HetGraph;
use crate::numcore::{ParamId, ParamStore, Tensor};

/// Standard deviation of per-node embeddings for featureless types.
pub const EMBED_INIT_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fuse {
    Mean,
    Sum,
    /// Column concatenation followed by a learned projection back to `d_h`.
    Concat,
}

impl FromStr for Fuse {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Fuse::Mean),
            "sum" => Ok(Fuse::Sum),
            "concat" => Ok(Fuse::Concat),
            _ => Err(Error::InvalidArgument(format!(
                "unknown fuse mode `{s}` (mean|sum|concat)"
            ))),
        }
    }
}

impl fmt::Display for Fuse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fuse::Mean => "mean",
            Fuse::Sum => "sum",
            Fuse::Concat => "concat",
        })
    }
}

/// How the per-node correlation terms enter the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Homo,
    Hetero,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::Homo, Channel::Hetero];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Homo => "homo",
            Channel::Hetero => "hetero",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub layers: usize,
    pub fuse: Fuse,
    /// Weight of the correlation loss.
    pub alpha: f64,
    /// Weight of the reconstruction loss.
    pub beta: f64,
    /// Probability that a training label is withheld from the input in an epoch.
    pub label_mask_p: f64,
    /// Fraction of start-type nodes from which a masking walk is launched.
    pub edge_mask_ratio: f64,
    /// Metapath repetitions per masking walk.
    pub walk_len: usize,
    pub negatives_per_positive: usize,
    /// Adds target-0 terms (homo on negatives, hetero on positives).
    pub contrastive_completion: bool,
    /// Independent decoders for the two reconstruction terms.
    pub separate_decoder: bool,
    /// Restrict the classification loss to training nodes whose label was withheld.
    pub mask_loss_only: bool,
    /// Sample the structure mask once instead of every epoch.
    pub mask_once: bool,
    pub corr_reduction: Reduction,
    pub multilabel: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 64,
            layers: 2,
            fuse: Fuse::Mean,
            alpha: 0.2,
            beta: 0.2,
            label_mask_p: 0.7,
            edge_mask_ratio: 0.2,
            walk_len: 2,
            negatives_per_positive: 1,
            contrastive_completion: false,
            separate_decoder: false,
            mask_loss_only: false,
            mask_once: false,
            corr_reduction: Reduction::Mean,
            multilabel: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.label_mask_p) {
            return bad(format!("label_mask_p must lie in [0, 1], got {}", self.label_mask_p));
        }
        if !(0.0..=1.0).contains(&self.edge_mask_ratio) {
            return bad(format!(
                "edge_mask_ratio must lie in [0, 1], got {}",
                self.edge_mask_ratio
            ));
        }
        if self.hidden_dim < 2 {
            return bad(format!("hidden_dim must be at least 2, got {}", self.hidden_dim));
        }
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if self.walk_len == 0 {
            return bad("walk_len must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InputParam {
    /// `dim x d_h`, applied to the (label-augmented) feature matrix.
    Projection(ParamId),
    /// `count x d_h` learnable rows.
    Embedding(ParamId),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewParams {
    pub w_self: ParamId,
    pub w_nbr: ParamId,
}

/// Parameter handles into a [`ParamStore`], organised by role.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub store: ParamStore,
    pub input: Vec<InputParam>,
    /// `C x d_input` of the target type.
    pub label_embed: ParamId,
    /// `views[layer][channel][relation]`.
    pub views: Vec<[Vec<ViewParams>; 2]>,
    /// `fuse_proj[layer][channel][type]`, present for concat fusion on types
    /// that receive at least one view.
    pub fuse_proj: Vec<[Vec<Option<ParamId>>; 2]>,
    /// One shared decoder, or `[homo, hetero]` when separate.
    pub decoders: Vec<Decoder>,
    /// `d_h x C`.
    pub head: ParamId,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl ModelParams {
    /// Freshly initialised parameters for `g`.
    pub fn init<R: Rng + ?Sized>(g: &HetGraph, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.hidden_dim;
        let c = g.labels.num_classes;
        if c == 0 {
            return Err(Error::Data("label table declares zero classes".into()));
        }
        let mut store = ParamStore::new();
        let normal = Normal::new(0.0, EMBED_INIT_STD).expect("positive std");

        let mut input = Vec::with_capacity(g.node_types.len());
        for t in &g.node_types {
            input.push(if t.is_featureless() {
                let e = Array2::from_shape_simple_fn((t.count, d), || normal.sample(rng));
                InputParam::Embedding(store.add(format!("input.{}.embed", t.name), e))
            } else {
                InputParam::Projection(store.add(format!("input.{}.proj", t.name), glorot(t.dim, d, rng)))
            });
        }
        let target = g.target_type_index();
        let d_in = match input[target] {
            InputParam::Projection(_) => g.node_types[target].dim,
            InputParam::Embedding(_) => d,
        };
        let label_embed = store.add("label_embed", glorot(c, d_in, rng));

        let source_views = views_by_source(g);
        for (ty, v) in source_views.iter().enumerate() {
            if v.is_empty() {
                log::info!(
                    "no relation starts at node type {}; it keeps its input representation",
                    g.node_types[ty].name
                );
            }
        }

        let mut views = Vec::with_capacity(cfg.layers);
        let mut fuse_proj = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut per_channel: [Vec<ViewParams>; 2] = [Vec::new(), Vec::new()];
            let mut proj_channel: [Vec<Option<ParamId>>; 2] = [Vec::new(), Vec::new()];
            for ch in Channel::BOTH {
                for r in &g.relations {
                    let w_self = store.add(format!("layer{l}.{}.{}.self", r.name, ch.as_str()), glorot(d, d, rng));
                    let w_nbr = store.add(format!("layer{l}.{}.{}.nbr", r.name, ch.as_str()), glorot(d, d, rng));
                    per_channel[ch.index()].push(ViewParams { w_self, w_nbr });
                }
                for (ty, sv) in source_views.iter().enumerate() {
                    let p = (cfg.fuse == Fuse::Concat && !sv.is_empty()).then(|| {
                        let name = format!("layer{l}.{}.{}.fuse", g.node_types[ty].name, ch.as_str());
                        store.add(name, glorot(sv.len() * d, d, rng))
                    });
                    proj_channel[ch.index()].push(p);
                }
            }
            views.push(per_channel);
            fuse_proj.push(proj_channel);
        }

        let mut decoders = vec![Decoder::new(&mut store, "decoder", d, rng)];
        if cfg.separate_decoder {
            decoders.push(Decoder::new(&mut store, "decoder.hetero", d, rng));
        }
        let head = store.add("head", glorot(d, c, rng));

        Ok(ModelParams {
            store,
            input,
            label_embed,
            views,
            fuse_proj,
            decoders,
            head,
            hidden_dim: d,
            num_classes: c,
        })
    }

    /// Copies every homo-channel layer weight onto its hetero counterpart.
    pub fn mirror_channels(&mut self) {
        for l in 0..self.views.len() {
            for r in 0..self.views[l][0].len() {
                let (h, x) = (self.views[l][0][r], self.views[l][1][r]);
                let v = self.store.value(h.w_self).clone();
                *self.store.value_mut(x.w_self) = v;
                let v = self.store.value(h.w_nbr).clone();
                *self.store.value_mut(x.w_nbr) = v;
            }
            for t in 0..self.fuse_proj[l][0].len() {
                if let (Some(h), Some(x)) = (self.fuse_proj[l][0][t], self.fuse_proj[l][1][t]) {
                    let v = self.store.value(h).clone();
                    *self.store.value_mut(x) = v;
                }
            }
        }
    }

    /// Decoder used for the given channel's reconstruction terms.
    pub fn decoder(&self, ch: Channel) -> &Decoder {
        &self.decoders[ch.index().min(self.decoders.len() - 1)]
    }
}

/// Relation indices grouped by their source node type.
pub(crate) fn views_by_source(g: &HetGraph) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); g.node_types.len()];
    for r in 0..g.relations.len() {
        out[g.endpoint_types(r).0].push(r);
    }
    out
}
