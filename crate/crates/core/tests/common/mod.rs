#![allow(dead_code)]

pub mod oracle;

use hetgnn_core::hetgraph::{Csr, HetGraph, LabelTable, NodeTypeTable, Relation, Split, SplitTable};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdős–Rényi pair list on `n` nodes (u < v).
pub fn random_pairs(n: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                out.push((u, v));
            }
        }
    }
    out
}

pub fn random_features(n: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0))
}

/// Random labels over `c` classes; roughly `unlabeled` of the nodes get none.
pub fn random_labels(n: usize, c: usize, multilabel: bool, unlabeled: f64, rng: &mut impl Rng) -> LabelTable {
    let mut t = LabelTable::new("t", c, multilabel, n);
    for u in 0..n {
        if rng.random::<f64>() < unlabeled {
            continue;
        }
        let classes = if multilabel {
            let mut s: Vec<usize> = (0..c).filter(|_| rng.random::<f64>() < 0.4).collect();
            if s.is_empty() {
                s.push(rng.random_range(0..c));
            }
            s
        } else {
            vec![rng.random_range(0..c)]
        };
        t.set(u, classes);
    }
    t
}

/// Random simple d-regular graph via the pairing model with rejection.
pub fn random_regular(n: usize, d: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    assert!((n * d).is_multiple_of(2) && d < n);
    'retry: loop {
        let mut stubs: Vec<usize> = (0..n).flat_map(|u| std::iter::repeat_n(u, d)).collect();
        let mut seen = std::collections::BTreeSet::new();
        while !stubs.is_empty() {
            let i = rng.random_range(0..stubs.len());
            let a = stubs.swap_remove(i);
            let j = rng.random_range(0..stubs.len());
            let b = stubs.swap_remove(j);
            if a == b || !seen.insert((a.min(b), a.max(b))) {
                continue 'retry;
            }
        }
        return seen.into_iter().collect();
    }
}

fn relation(name: &str, src: &str, dst: &str, adj: Csr, rev: Option<&str>) -> Relation {
    Relation {
        name: name.into(),
        src_type: src.into(),
        dst_type: dst.into(),
        adjacency: adj,
        reverse_of: rev.map(Into::into),
    }
}

/// Adds `name` and `rev_name` built from directed pairs `src -> dst`.
pub fn add_pair_relation(
    rels: &mut Vec<Relation>,
    name: &str,
    src: (&str, usize),
    dst: (&str, usize),
    pairs: &[(usize, usize)],
) {
    let (adj, _) = Csr::from_pairs(src.1, dst.1, pairs);
    let rev = format!("rev_{name}");
    rels.push(relation(name, src.0, dst.0, adj.clone(), None));
    rels.push(relation(&rev, dst.0, src.0, adj.transpose(), Some(name)));
}

/// Three-type graph `a - b - c` with relations `ab`, `bc` and their reverses.
/// Type `a` is featured, labeled and split; `b` and `c` are featureless.
pub fn chain_graph(na: usize, nb: usize, nc: usize, p: f64, seed: u64) -> HetGraph {
    let mut r = rng(seed);
    let mut ab = Vec::new();
    for u in 0..na {
        for v in 0..nb {
            if r.random::<f64>() < p {
                ab.push((u, v));
            }
        }
    }
    let mut bc = Vec::new();
    for u in 0..nb {
        for v in 0..nc {
            if r.random::<f64>() < p {
                bc.push((u, v));
            }
        }
    }
    let mut rels = Vec::new();
    add_pair_relation(&mut rels, "ab", ("a", na), ("b", nb), &ab);
    add_pair_relation(&mut rels, "bc", ("b", nb), ("c", nc), &bc);
    let classes: Vec<usize> = (0..na).map(|_| r.random_range(0..3)).collect();
    let mut labels = LabelTable::from_classes("a", 3, &classes);
    labels.target_type = "a".into();
    let mut splits = SplitTable::new(na);
    for u in 0..na {
        let s = match u % 3 {
            0 => Split::Train,
            1 => Split::Val,
            _ => Split::Test,
        };
        splits.set(u, s);
    }
    let types = vec![
        NodeTypeTable::with_features("a", random_features(na, 3, &mut r)),
        NodeTypeTable::featureless("b", nb),
        NodeTypeTable::featureless("c", nc),
    ];
    HetGraph::new(types, rels, labels, splits).unwrap()
}

/// Authors a0..a3 and papers p0, p1 with edges a0-p0, a1-p0, a2-p1, a3-p1.
pub fn six_node_graph(a3_features: [f64; 2]) -> HetGraph {
    let mut rels = Vec::new();
    add_pair_relation(
        &mut rels,
        "writes",
        ("a", 4),
        ("p", 2),
        &[(0, 0), (1, 0), (2, 1), (3, 1)],
    );
    let xa = array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], a3_features];
    let xp = array![[0.2, -0.1, 0.3], [0.7, 0.1, -0.4]];
    let labels = LabelTable::from_classes("a", 2, &[0, 1, 0, 1]);
    let mut splits = SplitTable::new(4);
    splits.set(0, Split::Train);
    splits.set(1, Split::Train);
    splits.set(2, Split::Val);
    splits.set(3, Split::Test);
    let types = vec![
        NodeTypeTable::with_features("a", xa),
        NodeTypeTable::with_features("p", xp),
    ];
    HetGraph::new(types, rels, labels, splits).unwrap()
}
