//! Planted-homophily heterogeneous graphs.
//!
//! Target nodes get balanced uniform classes (sizes differ by at most one,
//! assignment uniformly permuted). Each intermediate node picks an anchor
//! class and links to `k` distinct target nodes; each link comes from the
//! anchor class with probability `q` and from a uniformly chosen other class
//! otherwise. Target features are `s * centroid[class] + (1 - s) * noise`.
//! With `q_alt`, target nodes and intermediates are split into two halves
//! that only link within their half, the second half using `q_alt`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{save_graph, validate, Csr, HetGraph, LabelTable, NodeTypeTable, Relation, Split, SplitTable};

pub const TARGET_TYPE: &str = "target";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub target_nodes: usize,
    /// One intermediate type per entry, with that many nodes.
    pub intermediate_sizes: Vec<usize>,
    /// Probability that a link is drawn from the intermediate's anchor class.
    pub q: f64,
    /// Agreement probability of the second population, when mixed.
    pub q_alt: Option<f64>,
    /// Feature signal strength.
    pub s: f64,
    pub feature_dim: usize,
    /// Target links per intermediate node.
    pub k: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 2,
            target_nodes: 1000,
            intermediate_sizes: vec![2000],
            q: 0.9,
            q_alt: None,
            s: 0.2,
            feature_dim: 16,
            k: 5,
            train_frac: 0.3,
            val_frac: 0.2,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        for (name, v) in [("q", self.q), ("s", self.s), ("q_alt", self.q_alt.unwrap_or(0.0))] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.intermediate_sizes.is_empty() {
            return bad("need at least one intermediate type".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        let fr = [self.train_frac, self.val_frac];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || self.train_frac + self.val_frac > 1.0 {
            return bad(format!("split fractions {fr:?} must be in [0, 1] and sum to at most 1"));
        }
        let pops = if self.q_alt.is_some() { 2 } else { 1 };
        let smallest_pop = self.target_nodes / pops;
        if self.k == 0 || self.k > smallest_pop {
            return bad(format!(
                "infeasible degree: k = {} links per intermediate but a population has {} target nodes",
                self.k, smallest_pop
            ));
        }
        Ok(())
    }

    /// Probability that two links of one intermediate node share a class:
    /// `q^2 + (1-q)^2 / (C-1)`. Approximates the label homophily of each
    /// target-intermediate-target metapath (per population when mixed).
    pub fn expected_homophily(&self) -> f64 {
        pair_agreement(self.q, self.classes)
    }
}

pub fn pair_agreement(q: f64, classes: usize) -> f64 {
    q * q + (1.0 - q) * (1.0 - q) / (classes - 1) as f64
}

/// `(relation name, reverse name)` linking the target type to intermediate `i`.
pub fn relation_names(i: usize) -> (String, String) {
    (format!("to_i{i}"), format!("rev_to_i{i}"))
}

pub fn intermediate_name(i: usize) -> String {
    format!("i{i}")
}

/// Generates the graph described by `spec`.
pub fn synth_graph(spec: &SynthSpec) -> Result<HetGraph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.target_nodes;
    let c = spec.classes;
    // balanced classes: class sizes differ by at most one
    let mut classes: Vec<usize> = (0..n).map(|u| u % c).collect();
    classes.shuffle(&mut rng);

    // populations: [0, half) and [half, n) when mixed
    let ranges: Vec<(usize, usize)> = if spec.q_alt.is_some() {
        vec![(0, n / 2), (n / 2, n)]
    } else {
        vec![(0, n)]
    };
    let qs: Vec<f64> = std::iter::once(spec.q).chain(spec.q_alt).collect();
    let pools: Vec<Vec<Vec<usize>>> = ranges
        .iter()
        .map(|&(lo, hi)| {
            let mut by_class = vec![Vec::new(); c];
            for u in lo..hi {
                by_class[classes[u]].push(u);
            }
            by_class
        })
        .collect();

    let mut node_types = vec![NodeTypeTable::with_features(
        TARGET_TYPE,
        features(&classes, spec, &mut rng),
    )];
    let mut relations = Vec::new();
    for (i, &m) in spec.intermediate_sizes.iter().enumerate() {
        let mut pairs = Vec::with_capacity(m * spec.k);
        for j in 0..m {
            // each population gets a contiguous block of intermediates
            let pop = j * ranges.len() / m.max(1);
            let links = draw_links(&pools[pop], qs[pop], spec.k, &mut rng)?;
            pairs.extend(links.into_iter().map(|u| (u, j)));
        }
        let (adj, _) = Csr::from_pairs(n, m, &pairs);
        let (name, rev) = relation_names(i);
        let inter = intermediate_name(i);
        node_types.push(NodeTypeTable::featureless(&inter, m));
        relations.push(Relation {
            name: name.clone(),
            src_type: TARGET_TYPE.into(),
            dst_type: inter.clone(),
            adjacency: adj.clone(),
            reverse_of: None,
        });
        relations.push(Relation {
            name: rev,
            src_type: inter,
            dst_type: TARGET_TYPE.into(),
            adjacency: adj.transpose(),
            reverse_of: Some(name),
        });
    }

    let labels = LabelTable::from_classes(TARGET_TYPE, c, &classes);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = (spec.train_frac * n as f64).round() as usize;
    let n_val = ((spec.val_frac * n as f64).round() as usize).min(n - n_train);
    let mut splits = SplitTable::new(n);
    for (rank, &u) in order.iter().enumerate() {
        let s = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        splits.set(u, s);
    }
    let g = HetGraph::new(node_types, relations, labels, splits)?;
    let report = validate(&g);
    if !report.is_empty() {
        return Err(Error::Data(format!(
            "generated graph failed validation: {:?}",
            report.violations
        )));
    }
    Ok(g)
}

fn features<R: Rng + ?Sized>(classes: &[usize], spec: &SynthSpec, rng: &mut R) -> Array2<f64> {
    let c = spec.classes;
    let f = spec.feature_dim;
    let centroids: Array2<f64> = Array2::from_shape_simple_fn((c, f), || StandardNormal.sample(rng));
    let mut x = Array2::zeros((classes.len(), f));
    for (u, &y) in classes.iter().enumerate() {
        for d in 0..f {
            let noise: f64 = StandardNormal.sample(rng);
            x[[u, d]] = spec.s * centroids[[y, d]] + (1.0 - spec.s) * noise;
        }
    }
    x
}

/// `k` distinct target nodes for one intermediate node of a population.
fn draw_links<R: Rng + ?Sized>(by_class: &[Vec<usize>], q: f64, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let c = by_class.len();
    let anchor = rng.random_range(0..c);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let max_attempts = 100 * k;
    let mut attempts = 0;
    while chosen.len() < k {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidArgument(format!(
                "infeasible degree: could not draw {k} distinct links (class sizes {:?})",
                by_class.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        let class = if rng.random::<f64>() < q {
            anchor
        } else {
            let other = rng.random_range(0..c - 1);
            if other >= anchor {
                other + 1
            } else {
                other
            }
        };
        let pool = &by_class[class];
        if pool.is_empty() {
            continue;
        }
        let u = pool[rng.random_range(0..pool.len())];
        if !chosen.contains(&u) {
            chosen.push(u);
        }
    }
    Ok(chosen)
}

#[derive(Serialize)]
struct SynthInfo<'a> {
    spec: &'a SynthSpec,
    expected_homophily: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    expected_homophily_alt: Option<f64>,
}

/// Generates and writes the graph plus `synth.json` (spec and analytic
/// expected homophily) into `dir`.
pub fn write_synth(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<HetGraph> {
    let dir = dir.as_ref();
    let g = synth_graph(spec)?;
    save_graph(&g, dir)?;
    let info = SynthInfo {
        spec,
        expected_homophily: spec.expected_homophily(),
        expected_homophily_alt: spec.q_alt.map(|q| pair_agreement(q, spec.classes)),
    };
    let path = dir.join("synth.json");
    let json = serde_json::to_string_pretty(&info).expect("serialisable");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infeasible_degree_rejected() {
        let spec = SynthSpec {
            target_nodes: 4,
            k: 5,
            ..Default::default()
        };
        assert!(matches!(synth_graph(&spec), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn spec_ranges_checked() {
        for bad in [
            SynthSpec {
                q: 1.2,
                ..Default::default()
            },
            SynthSpec {
                s: -0.1,
                ..Default::default()
            },
            SynthSpec {
                classes: 1,
                ..Default::default()
            },
            SynthSpec {
                train_frac: 0.9,
                val_frac: 0.2,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn shape_and_splits() {
        let spec = SynthSpec {
            target_nodes: 100,
            intermediate_sizes: vec![50, 30],
            ..Default::default()
        };
        let g = synth_graph(&spec).unwrap();
        assert_eq!(g.node_types.len(), 3);
        assert_eq!(g.relations.len(), 4);
        assert_eq!(g.relations[0].adjacency.nnz(), 50 * spec.k);
        assert_eq!(g.splits.nodes(Split::Train).len(), 30);
        assert_eq!(g.splits.nodes(Split::Val).len(), 20);
        assert_eq!(g.splits.nodes(Split::Test).len(), 50);
    }

    #[test]
    fn analytic_agreement() {
        assert_eq!(pair_agreement(1.0, 3), 1.0);
        assert_eq!(pair_agreement(0.0, 2), 1.0);
        assert!((pair_agreement(0.9, 2) - 0.82).abs() < 1e-12);
    }
}
