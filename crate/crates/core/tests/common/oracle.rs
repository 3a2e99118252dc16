//! Brute-force reference implementations of the graph metrics.

// index loops mirror the pairwise definitions
#![allow(clippy::needless_range_loop)]

use hetgnn_core::hetgraph::LabelTable;
use ndarray::Array2;

pub fn dense(n: usize, pairs: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut a = vec![vec![false; n]; n];
    for &(u, v) in pairs {
        if u != v {
            a[u][v] = true;
            a[v][u] = true;
        }
    }
    a
}

pub fn agree(labels: &LabelTable, u: usize, v: usize) -> Option<bool> {
    let (a, b) = (labels.classes_of(u), labels.classes_of(v));
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some(a.iter().any(|c| b.contains(c)))
}

pub fn brute_edge_homophily(a: &[Vec<bool>], labels: &LabelTable) -> Option<f64> {
    let (mut same, mut total) = (0usize, 0usize);
    for u in 0..a.len() {
        for v in u + 1..a.len() {
            if a[u][v] {
                if let Some(s) = agree(labels, u, v) {
                    total += 1;
                    same += s as usize;
                }
            }
        }
    }
    (total > 0).then(|| same as f64 / total as f64)
}

pub fn brute_node_homophily(a: &[Vec<bool>], labels: &LabelTable) -> Vec<Option<f64>> {
    (0..a.len())
        .map(|u| {
            if labels.classes_of(u).is_empty() {
                return None;
            }
            let (mut same, mut total) = (0usize, 0usize);
            for v in 0..a.len() {
                if a[u][v] {
                    if let Some(s) = agree(labels, u, v) {
                        total += 1;
                        same += s as usize;
                    }
                }
            }
            (total > 0).then(|| same as f64 / total as f64)
        })
        .collect()
}

pub fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

/// `1/2 trace(X^T L X)` with `L = I - D^-1/2 A D^-1/2` (zero rows for isolated nodes).
pub fn trace_energy(a: &[Vec<bool>], x: &Array2<f64>) -> f64 {
    let n = a.len();
    let deg: Vec<f64> = a.iter().map(|r| r.iter().filter(|&&b| b).count() as f64).collect();
    let mut l = Array2::<f64>::zeros((n, n));
    for u in 0..n {
        if deg[u] > 0.0 {
            l[[u, u]] = 1.0;
        }
        for v in 0..n {
            if a[u][v] {
                l[[u, v]] = -1.0 / (deg[u] * deg[v]).sqrt();
            }
        }
    }
    0.5 * x.t().dot(&l).dot(x).diag().sum()
}

pub fn max_row_norm_sq(x: &Array2<f64>) -> f64 {
    x.rows().into_iter().map(|r| r.dot(&r)).fold(0.0, f64::max)
}
