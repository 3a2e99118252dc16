use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::synth::{synth_graph, SynthSpec};
use super::train::{objective, sample_plan};
use crate::error::Result;
use crate::hetgraph::{HetGraph, Split};
use crate::metapath::enumerate_length2;
use crate::model::{sample_label_mask, ModelConfig, ModelParams};
use crate::numcore::{grad_check, GradCheckOptions, GradCheckReport};

/// A ≤ 30-node planted graph (18 target nodes, 12 intermediates) for
/// gradient checks.
pub fn gradcheck_graph(seed: u64) -> Result<HetGraph> {
    synth_graph(&SynthSpec {
        classes: 3,
        target_nodes: 18,
        intermediate_sizes: vec![8, 4],
        q: 0.7,
        s: 0.5,
        feature_dim: 5,
        k: 3,
        seed,
        ..Default::default()
    })
}

/// Central-difference check of the full objective on `g` with one frozen
/// structure mask and label mask.
pub fn gradcheck_objective(
    g: &HetGraph,
    cfg: &ModelConfig,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(g, cfg, &mut rng)?;
    let paths = enumerate_length2(g, &g.labels.target_type)?;
    let (mut mask_rng, mut neg_rng) = (ChaCha8Rng::seed_from_u64(seed ^ 1), ChaCha8Rng::seed_from_u64(seed ^ 2));
    let plan = sample_plan(g, &paths, cfg, seed, &mut mask_rng, &mut neg_rng)?;
    let labels = sample_label_mask(g, cfg.label_mask_p, &mut rng)?;
    let train = g.splits.nodes(Split::Train);
    let template = params.clone();
    grad_check(
        &mut params.store,
        |store, tape| {
            let mut p = template.clone();
            p.store = store.clone();
            Ok(objective(g, &plan, &labels.rows, &train, &p, cfg, tape)?.total)
        },
        opts,
    )
}
