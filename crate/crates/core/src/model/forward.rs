use super::{views_by_source, Channel, Fuse, InputParam, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::hetgraph::HetGraph;
use crate::metapath::GraphView;
use crate::numcore::{Tape, Tensor, Var};

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Final-layer homo-channel representation per node type.
    pub homo: Vec<Var>,
    /// Final-layer hetero-channel representation per node type.
    pub hetero: Vec<Var>,
    /// `n_target x C` classifier logits on `homo + hetero`.
    pub logits: Var,
    pub target: usize,
}

impl ForwardOutput {
    pub fn channel(&self, ch: Channel) -> &[Var] {
        match ch {
            Channel::Homo => &self.homo,
            Channel::Hetero => &self.hetero,
        }
    }
}

/// Records the network on `tape`.
///
/// `label_rows` is the `n_target x C` matrix of injected labels (zero rows for
/// nodes whose label is withheld or unknown); it is mapped through the label
/// embedding and added to the target type's input. Only adjacency in `view`
/// is read, so masked edges never carry messages.
pub fn forward(
    g: &HetGraph,
    view: &GraphView,
    label_rows: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
    tape: &mut Tape,
) -> Result<ForwardOutput> {
    let target = g.target_type_index();
    if view.adjacency.len() != g.relations.len() {
        return Err(Error::ShapeMismatch(format!(
            "view has {} relations, graph has {}",
            view.adjacency.len(),
            g.relations.len()
        )));
    }
    if label_rows.dim() != (g.node_types[target].count, params.num_classes) {
        return Err(Error::ShapeMismatch(format!(
            "label rows are {:?}, expected ({}, {})",
            label_rows.dim(),
            g.node_types[target].count,
            params.num_classes
        )));
    }

    let store = &params.store;
    let mut h0 = Vec::with_capacity(g.node_types.len());
    for (ty, t) in g.node_types.iter().enumerate() {
        let mut x = match params.input[ty] {
            InputParam::Embedding(id) => tape.param(store, id),
            InputParam::Projection(_) => {
                tape.constant(t.features.clone().expect("features present for projected types"))
            }
        };
        if ty == target {
            let y = tape.constant(label_rows.clone());
            let w_y = tape.param(store, params.label_embed);
            let injected = tape.matmul(y, w_y);
            x = tape.add(x, injected);
        }
        h0.push(match params.input[ty] {
            InputParam::Embedding(_) => x,
            InputParam::Projection(id) => {
                let p = tape.param(store, id);
                tape.matmul(x, p)
            }
        });
    }

    let sources = views_by_source(g);
    let n_layers = params.views.len();
    let mut h = [h0.clone(), h0];
    for l in 0..n_layers {
        let last = l + 1 == n_layers;
        for ch in Channel::BOTH {
            let c = ch as usize;
            let prev = &h[c];
            let mut next = prev.clone();
            for (ty, rels) in sources.iter().enumerate() {
                if rels.is_empty() {
                    continue;
                }
                let mut outs = Vec::with_capacity(rels.len());
                for &r in rels {
                    let (_, dst) = g.endpoint_types(r);
                    let vp = params.views[l][c][r];
                    let w_self = tape.param(store, vp.w_self);
                    let w_nbr = tape.param(store, vp.w_nbr);
                    let own = tape.matmul(prev[ty], w_self);
                    let agg = tape.mean_aggregate(prev[dst], view.adjacency[r].clone());
                    let msg = tape.matmul(agg, w_nbr);
                    let z = tape.add(own, msg);
                    outs.push(if last { z } else { tape.relu(z) });
                }
                next[ty] = fuse(tape, params, cfg.fuse, l, c, ty, &outs);
            }
            h[c] = next;
        }
    }

    let [homo, hetero] = h;
    let combined = tape.add(homo[target], hetero[target]);
    let head = tape.param(store, params.head);
    let logits = tape.matmul(combined, head);
    Ok(ForwardOutput {
        homo,
        hetero,
        logits,
        target,
    })
}

fn fuse(tape: &mut Tape, params: &ModelParams, mode: Fuse, l: usize, c: usize, ty: usize, outs: &[Var]) -> Var {
    match mode {
        Fuse::Sum => tape.add_all(outs),
        Fuse::Mean => {
            let s = tape.add_all(outs);
            if outs.len() == 1 {
                s
            } else {
                tape.scale(s, 1.0 / outs.len() as f64)
            }
        }
        Fuse::Concat => {
            let cat = tape.concat_cols(outs);
            let p = params.fuse_proj[l][c][ty].expect("concat projection allocated for every fused type");
            let p = tape.param(&params.store, p);
            tape.matmul(cat, p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{Csr, LabelTable, NodeTypeTable, Relation, SplitTable};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> HetGraph {
        let (adj, _) = Csr::from_pairs(2, 1, &[(0, 0)]);
        HetGraph::new(
            vec![
                NodeTypeTable::with_features("t", array![[1.0, -2.0], [0.5, 0.5]]),
                NodeTypeTable::with_features("i", array![[3.0, -1.0]]),
            ],
            vec![Relation {
                name: "r".into(),
                src_type: "t".into(),
                dst_type: "i".into(),
                adjacency: adj,
                reverse_of: None,
            }],
            LabelTable::from_classes("t", 2, &[0, 1]),
            SplitTable::new(2),
        )
        .unwrap()
    }

    #[test]
    fn single_step_trace_is_relu_of_neighbor() {
        let g = tiny();
        let cfg = ModelConfig {
            hidden_dim: 2,
            layers: 2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ModelParams::init(&g, &cfg, &mut rng).unwrap();
        let eye = array![[1.0, 0.0], [0.0, 1.0]];
        for id in p.store.ids().collect::<Vec<_>>() {
            let name = p.store.name(id).to_string();
            if name.starts_with("input.") || name.ends_with(".nbr") {
                *p.store.value_mut(id) = eye.clone();
            } else if name.ends_with(".self") || name == "label_embed" {
                p.store.value_mut(id).fill(0.0);
            }
        }
        let mut tape = Tape::new();
        let out = forward(&g, &GraphView::full(&g), &Tensor::zeros((2, 2)), &p, &cfg, &mut tape).unwrap();
        // first layer (with ReLU) at target node 0 sees only intermediate node 0
        // type `i` has no outgoing view, so it keeps [3, -1]; layer 1 -> relu -> [3, 0]
        // layer 2 (no relu) aggregates the same unchanged neighbor: [3, -1]
        let h = tape.value(out.homo[0]);
        assert_eq!(h.row(0), array![3.0, -1.0]);
        assert_eq!(h.row(1), array![0.0, 0.0]);
    }

    #[test]
    fn label_rows_shape_checked() {
        let g = tiny();
        let cfg = ModelConfig {
            hidden_dim: 2,
            ..Default::default()
        };
        let p = ModelParams::init(&g, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut tape = Tape::new();
        assert!(forward(&g, &GraphView::full(&g), &Tensor::zeros((3, 2)), &p, &cfg, &mut tape).is_err());
    }
}
