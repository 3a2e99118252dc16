mod common;

use std::collections::BTreeSet;
use std::fs;

use common::rng;
use hetgnn_core::harness::{
    bucket_report, bucket_report_with, evaluate, load_run, synth_graph, train, train_model, DirLock, SynthSpec,
    TrainRunConfig, Trainer, CURVES_FILE, LOCK_FILE, PARAMS_FILE,
};
use hetgnn_core::hetgraph::{HetGraph, LabelTable, Split};
use hetgnn_core::homophily::{edge_label_homophily, local_metric, BucketScheme, LocalKind};
use hetgnn_core::metapath::{enumerate_length2, induce_subgraph};
use hetgnn_core::model::ModelConfig;
use hetgnn_core::numcore::{pearson_abs, Tensor};
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn tiny_run(seed: u64) -> (HetGraph, TrainRunConfig) {
    let g = synth_graph(&SynthSpec {
        classes: 3,
        target_nodes: 120,
        intermediate_sizes: vec![150, 60],
        q: 0.8,
        s: 0.3,
        feature_dim: 6,
        k: 4,
        seed,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainRunConfig {
        model: ModelConfig {
            hidden_dim: 8,
            ..Default::default()
        },
        epochs: 20,
        seed,
        ..Default::default()
    };
    (g, cfg)
}

#[test]
fn identical_runs_write_identical_files() {
    let (g, cfg) = tiny_run(1);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(&g, &cfg, a.path()).unwrap();
    train(&g, &cfg, b.path()).unwrap();
    for f in ["config.json", CURVES_FILE, PARAMS_FILE, "metrics.json", "buckets.csv"] {
        let (x, y) = (fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        assert!(!x.is_empty(), "{f} is empty");
        assert_eq!(x, y, "{f} differs");
    }
    assert!(!a.path().join(LOCK_FILE).exists());
    let curves = fs::read_to_string(a.path().join(CURVES_FILE)).unwrap();
    assert_eq!(curves.lines().next(), Some("epoch,L_cls,L_corr,L_rec,J,val_micro_f1"));
    assert!(!curves.contains('\r'));

    let (loaded_cfg, params) = load_run(&g, a.path()).unwrap();
    assert_eq!(loaded_cfg, cfg);
    let again = train_model(&g, &cfg).map_err(|d| d.cause).unwrap();
    for id in params.store.ids() {
        assert_eq!(params.store.value(id), again.params.store.value(id));
    }
}

#[test]
fn locked_directory_is_refused() {
    let (g, cfg) = tiny_run(2);
    let dir = tempfile::tempdir().unwrap();
    let held = DirLock::acquire(dir.path()).unwrap();
    assert!(train(&g, &cfg, dir.path()).is_err());
    drop(held);
    assert!(train(&g, &cfg, dir.path()).is_ok());
}

#[test]
fn zero_epochs_returns_initialisation() {
    let (g, mut cfg) = tiny_run(3);
    cfg.epochs = 0;
    let out = train_model(&g, &cfg).map_err(|d| d.cause).unwrap();
    let init = Trainer::new(&g, &cfg).unwrap();
    assert!(out.curves.is_empty());
    assert_eq!(out.metrics.best_epoch, 0);
    for id in init.params.store.ids() {
        assert_eq!(init.params.store.value(id), out.params.store.value(id));
    }
}

#[test]
fn different_seeds_differ() {
    let (g, cfg) = tiny_run(4);
    let other = TrainRunConfig { seed: 5, ..cfg.clone() };
    let a = train_model(&g, &cfg).map_err(|d| d.cause).unwrap();
    let b = train_model(&g, &other).map_err(|d| d.cause).unwrap();
    assert_ne!(a.curves[0].j, b.curves[0].j);
}

/// Label homophily of the induced target graph of one independent simulation
/// of the planted process.
fn simulate_homophily(q: f64, c: usize, n: usize, m: usize, k: usize, seed: u64) -> f64 {
    let mut r = rng(seed ^ 0x5eed);
    let mut classes: Vec<usize> = (0..n).map(|u| u % c).collect();
    classes.shuffle(&mut r);
    let mut by_class = vec![Vec::new(); c];
    for (u, &y) in classes.iter().enumerate() {
        by_class[y].push(u);
    }
    let mut edges = BTreeSet::new();
    for _ in 0..m {
        let anchor = r.random_range(0..c);
        let mut linked: Vec<usize> = Vec::new();
        while linked.len() < k {
            let class = if r.random::<f64>() < q {
                anchor
            } else {
                let others: Vec<usize> = (0..c).filter(|&x| x != anchor).collect();
                others[r.random_range(0..others.len())]
            };
            let pool = &by_class[class];
            if pool.is_empty() {
                continue;
            }
            let u = pool[r.random_range(0..pool.len())];
            if !linked.contains(&u) {
                linked.push(u);
            }
        }
        for (i, &u) in linked.iter().enumerate() {
            for &v in &linked[i + 1..] {
                edges.insert((u.min(v), u.max(v)));
            }
        }
    }
    let same = edges.iter().filter(|(u, v)| classes[*u] == classes[*v]).count();
    same as f64 / edges.len() as f64
}

fn measured_homophily(g: &HetGraph) -> f64 {
    let paths = enumerate_length2(g, "target").unwrap();
    let vals: Vec<f64> = paths
        .iter()
        .map(|p| {
            edge_label_homophily(&induce_subgraph(g, p).unwrap(), &g.labels)
                .value
                .unwrap()
        })
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

#[test]
fn generator_matches_monte_carlo_oracle() {
    for (q, c) in [(0.0, 2), (0.5, 2), (0.9, 2), (0.7, 3), (0.2, 4)] {
        let spec = SynthSpec {
            classes: c,
            q,
            seed: 21,
            ..Default::default()
        };
        let g = synth_graph(&spec).unwrap();
        let measured = measured_homophily(&g);
        let reps = 4;
        let oracle = (0..reps)
            .map(|s| simulate_homophily(q, c, spec.target_nodes, spec.intermediate_sizes[0], spec.k, s))
            .sum::<f64>()
            / reps as f64;
        assert!(
            (measured - oracle).abs() <= 0.03,
            "q={q} C={c}: measured {measured:.4}, oracle {oracle:.4}"
        );
    }
}

#[test]
fn full_agreement_gives_perfect_homophily() {
    for c in [2, 3, 5] {
        let g = synth_graph(&SynthSpec {
            classes: c,
            q: 1.0,
            intermediate_sizes: vec![800, 300],
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(measured_homophily(&g), 1.0);
    }
}

#[test]
fn no_signal_means_energy_uncorrelated_with_labels() {
    for seed in 0..3 {
        let g = synth_graph(&SynthSpec {
            s: 0.0,
            seed,
            ..Default::default()
        })
        .unwrap();
        let local = local_metric(&g, LocalKind::DirichletEnergy).unwrap();
        let (mut e, mut y) = (Vec::new(), Vec::new());
        for (u, v) in local.values.iter().enumerate() {
            if let Some(v) = v {
                e.push(*v);
                y.push(g.labels.class_of(u).unwrap() as f64);
            }
        }
        let r = pearson_abs(&e, &y).unwrap();
        assert!(r < 0.1, "seed {seed}: |r| = {r}");
    }
}

#[test]
fn training_accuracy_rises_over_first_epochs() {
    let mut monotone = 0;
    let mut report = Vec::new();
    for seed in 0..5 {
        let g = synth_graph(&SynthSpec {
            q: 0.9,
            s: 0.3,
            seed,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainRunConfig {
            seed,
            ..Default::default()
        };
        let train_nodes = g.splits.nodes(Split::Train);
        let mut t = Trainer::new(&g, &cfg).unwrap();
        let mut f1 = vec![evaluate(&t.infer().unwrap(), &g.labels, &train_nodes).unwrap().micro_f1];
        for _ in 0..10 {
            t.step().unwrap();
            f1.push(evaluate(&t.infer().unwrap(), &g.labels, &train_nodes).unwrap().micro_f1);
        }
        let ok = f1.windows(2).all(|w| w[1] >= w[0]) && f1[10] > f1[0];
        monotone += ok as usize;
        report.push(f1);
    }
    assert!(monotone >= 4, "{monotone}/5 monotone: {report:?}");
}

fn random_logits(n: usize, c: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((n, c), || r.random_range(-2.0..2.0))
}

#[test]
fn buckets_partition_test_split_and_single_bucket_is_global() {
    let g = synth_graph(&SynthSpec {
        classes: 3,
        q_alt: Some(0.2),
        seed: 7,
        ..Default::default()
    })
    .unwrap();
    let logits = random_logits(1000, 3, 1);
    let test = g.splits.nodes(Split::Test);
    for kind in [LocalKind::LabelHomophily, LocalKind::DirichletEnergy] {
        for k in [1, 3, 5, 8] {
            let rep = bucket_report(&g, &logits, kind, &BucketScheme::Quantiles(k)).unwrap();
            assert_eq!(rep.total_nodes(), test.len());
            assert_eq!(rep.rows.len(), k);
        }
    }
    let local = local_metric(&g, LocalKind::LabelHomophily).unwrap();
    let present: Vec<usize> = test.iter().copied().filter(|&u| local.values[u].is_some()).collect();
    let one = bucket_report_with(
        &g,
        &logits,
        LocalKind::LabelHomophily,
        &local,
        &present,
        &BucketScheme::Quantiles(1),
    )
    .unwrap();
    let global = evaluate(&logits, &g.labels, &present).unwrap();
    assert_eq!(one.rows.len(), 1);
    assert_eq!(one.rows[0].nodes, present.len());
    assert_eq!(one.rows[0].micro_f1, Some(global.micro_f1));
    assert_eq!(one.rows[0].macro_f1, Some(global.macro_f1));
    assert!(one.to_csv().starts_with("bucket,low,high,nodes,micro_f1,macro_f1\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn micro_f1_is_accuracy(
        truth in prop::collection::vec(0usize..5, 1..200),
        raw in prop::collection::vec(prop::collection::vec(-3i32..3, 5), 200),
        c in 2usize..6,
    ) {
        let n = truth.len();
        let truth: Vec<usize> = truth.iter().map(|&t| t % c).collect();
        let labels = LabelTable::from_classes("t", c, &truth);
        let logits = Array2::from_shape_fn((n, c), |(i, k)| raw[i][k] as f64);
        let nodes: Vec<usize> = (0..n).collect();
        let s = evaluate(&logits, &labels, &nodes).unwrap();

        // confusion-matrix oracle with lowest-index argmax
        let mut cm = vec![vec![0usize; c]; c];
        for i in 0..n {
            let mut best = 0;
            for k in 1..c {
                if logits[[i, k]] > logits[[i, best]] {
                    best = k;
                }
            }
            cm[truth[i]][best] += 1;
        }
        let correct: usize = (0..c).map(|k| cm[k][k]).sum();
        prop_assert_eq!(s.micro_f1, correct as f64 / n as f64);
        let macro_f1 = (0..c)
            .map(|k| {
                let tp = cm[k][k] as f64;
                let pred: usize = (0..c).map(|t| cm[t][k]).sum();
                let actual: usize = cm[k].iter().sum();
                if pred + actual == 0 { 0.0 } else { 2.0 * tp / (pred + actual) as f64 }
            })
            .sum::<f64>()
            / c as f64;
        prop_assert!((s.macro_f1 - macro_f1).abs() <= 1e-12);
        prop_assert_eq!(s.ap.is_some(), c == 2 && truth.contains(&1));
    }
}
