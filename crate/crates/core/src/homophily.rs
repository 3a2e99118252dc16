//! Label homophily and feature Dirichlet energy on induced graphs, their
//! metapath averages (MLH / MDE), and node bucketing.
//!
//! Conventions:
//! - edges with an unlabeled endpoint are left out of label homophily;
//! - isolated nodes are left out of node-level means and flagged;
//! - degrees are taken inside the induced graph;
//! - the energy sum runs over ordered pairs, so that
//!   `E_edge = 1/4 sum_(u,v) |x_u/sqrt(d_u) - x_v/sqrt(d_v)|^2 = 1/2 tr(X^T L X)`
//!   with `L = I - D^-1/2 A D^-1/2` restricted to non-isolated nodes.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{HetGraph, LabelTable};
use crate::metapath::{enumerate_length2, induce_subgraph, InducedGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Edge,
    Node,
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge" => Ok(Level::Edge),
            "node" => Ok(Level::Node),
            other => Err(Error::InvalidArgument(format!("unknown level `{other}` (edge|node)"))),
        }
    }
}

/// Per-node local values; `None` marks a node excluded from the mean
/// (isolated, or unlabeled for label metrics).
#[derive(Clone, Debug, PartialEq)]
pub struct LocalMetricVector {
    pub values: Vec<Option<f64>>,
}

impl LocalMetricVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn excluded(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn mean(&self) -> Option<f64> {
        mean(self.values.iter().flatten().copied())
    }

    /// Node-wise average over several vectors of equal length, skipping
    /// entries that are `None`; a node is `None` only if it is `None` in all.
    pub fn average(vectors: &[LocalMetricVector]) -> Result<LocalMetricVector> {
        let n = vectors.first().map(|v| v.len()).unwrap_or(0);
        if vectors.iter().any(|v| v.len() != n) {
            return Err(Error::ShapeMismatch("local metric vectors differ in length".into()));
        }
        let values = (0..n)
            .map(|u| mean(vectors.iter().filter_map(|v| v.values[u])))
            .collect();
        Ok(LocalMetricVector { values })
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in it {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Edge homophily together with the number of edges skipped for unlabeled endpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeHomophily {
    pub value: Option<f64>,
    pub excluded_edges: usize,
}

/// Fraction of undirected edges whose endpoints agree.
pub fn edge_label_homophily(g: &InducedGraph, labels: &LabelTable) -> EdgeHomophily {
    let (mut agree, mut total, mut excluded) = (0usize, 0usize, 0usize);
    for &(u, v) in &g.edges {
        match labels.agree(u, v) {
            Some(a) => {
                total += 1;
                agree += a as usize;
            }
            None => excluded += 1,
        }
    }
    EdgeHomophily {
        value: (total > 0).then(|| agree as f64 / total as f64),
        excluded_edges: excluded,
    }
}

/// Local H(u) over labeled neighbors and its mean over nodes where it is defined.
pub fn node_label_homophily(g: &InducedGraph, labels: &LabelTable) -> (Option<f64>, LocalMetricVector) {
    let values = (0..g.node_count)
        .map(|u| {
            if !labels.is_labeled(u) {
                return None;
            }
            let (mut agree, mut total) = (0usize, 0usize);
            for &v in g.neighbors(u) {
                if let Some(a) = labels.agree(u, v) {
                    total += 1;
                    agree += a as usize;
                }
            }
            (total > 0).then(|| agree as f64 / total as f64)
        })
        .collect();
    let local = LocalMetricVector { values };
    (local.mean(), local)
}

fn check_rows(g: &InducedGraph, x: &Array2<f64>) -> Result<()> {
    if x.nrows() != g.node_count {
        return Err(Error::ShapeMismatch(format!(
            "feature matrix has {} rows, induced graph has {} nodes",
            x.nrows(),
            g.node_count
        )));
    }
    Ok(())
}

fn scaled_sq_dist(xu: ArrayView1<f64>, du: usize, xv: ArrayView1<f64>, dv: usize) -> f64 {
    let (su, sv) = (1.0 / (du as f64).sqrt(), 1.0 / (dv as f64).sqrt());
    xu.iter().zip(xv.iter()).map(|(a, b)| (a * su - b * sv).powi(2)).sum()
}

/// Graph-level Dirichlet energy (quarter sum over ordered edge pairs).
pub fn edge_dirichlet_energy(g: &InducedGraph, x: &Array2<f64>) -> Result<f64> {
    check_rows(g, x)?;
    let mut total = 0.0;
    for &(u, v) in &g.edges {
        total += scaled_sq_dist(x.row(u), g.degree(u), x.row(v), g.degree(v));
    }
    // each undirected edge stands for two ordered pairs
    Ok(0.5 * total)
}

/// Local energies `E(u) = 1/(4 d_u) sum_v |x_u/sqrt(d_u) - x_v/sqrt(d_v)|^2`
/// and their mean over non-isolated nodes.
pub fn node_dirichlet_energy(g: &InducedGraph, x: &Array2<f64>) -> Result<(Option<f64>, LocalMetricVector)> {
    check_rows(g, x)?;
    let values = (0..g.node_count)
        .map(|u| {
            let du = g.degree(u);
            if du == 0 {
                return None;
            }
            let s: f64 = g
                .neighbors(u)
                .iter()
                .map(|&v| scaled_sq_dist(x.row(u), du, x.row(v), g.degree(v)))
                .sum();
            Some(s / (4.0 * du as f64))
        })
        .collect();
    let local = LocalMetricVector { values };
    Ok((local.mean(), local))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetapathRow {
    /// Type string, e.g. `APA`.
    pub metapath: String,
    /// Comma-separated relation names.
    pub relations: String,
    pub induced_edges: usize,
    pub label_homophily: Option<f64>,
    pub dirichlet_energy: Option<f64>,
    /// Edges (edge level) or nodes (node level) left out of the label metric.
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub target: String,
    pub level: Level,
    pub rows: Vec<MetapathRow>,
    pub mlh: Option<f64>,
    pub mde: Option<f64>,
}

impl MetricReport {
    /// Fills the aggregates as arithmetic means of the per-metapath values.
    pub fn from_rows(target: impl Into<String>, level: Level, rows: Vec<MetapathRow>) -> Self {
        let mlh = aggregate(rows.iter().map(|r| r.label_homophily));
        let mde = aggregate(rows.iter().map(|r| r.dirichlet_energy));
        MetricReport {
            target: target.into(),
            level,
            rows,
            mlh,
            mde,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Mean over per-metapath values; `None` if any value is undefined or there are none.
pub fn aggregate(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Option<Vec<f64>> = values.into_iter().collect();
    vals.and_then(|v| mean(v.into_iter()))
}

fn report(g: &HetGraph, target: &str, level: Level, want_labels: bool, want_energy: bool) -> Result<MetricReport> {
    let paths = enumerate_length2(g, target)?;
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "no length-2 metapaths start and end at `{target}`"
        )));
    }
    let t = g.node_type_index(target)?;
    if want_labels && (g.labels.target_type != target || g.labels.num_classes == 0) {
        return Err(Error::Data(format!("node type `{target}` carries no labels")));
    }
    let features = if want_energy {
        Some(
            g.node_types[t]
                .features
                .as_ref()
                .ok_or_else(|| Error::Data(format!("node type `{target}` has no features")))?,
        )
    } else {
        None
    };
    let mut rows = Vec::with_capacity(paths.len());
    for p in &paths {
        let ig = induce_subgraph(g, p)?;
        let (label_homophily, excluded) = match (want_labels, level) {
            (false, _) => (None, 0),
            (true, Level::Edge) => {
                let h = edge_label_homophily(&ig, &g.labels);
                (h.value, h.excluded_edges)
            }
            (true, Level::Node) => {
                let (m, local) = node_label_homophily(&ig, &g.labels);
                (m, local.excluded())
            }
        };
        let dirichlet_energy = match (features, level) {
            (None, _) => None,
            (Some(x), Level::Edge) => Some(edge_dirichlet_energy(&ig, x)?),
            (Some(x), Level::Node) => node_dirichlet_energy(&ig, x)?.0,
        };
        rows.push(MetapathRow {
            metapath: p.render().to_string(),
            relations: p.text(),
            induced_edges: ig.n_edges(),
            label_homophily,
            dirichlet_energy,
            excluded,
        });
    }
    Ok(MetricReport::from_rows(target, level, rows))
}

/// Metapath-based label homophily over all length-2 metapaths of `target`.
pub fn mlh(g: &HetGraph, target: &str, level: Level) -> Result<MetricReport> {
    report(g, target, level, true, false)
}

/// Metapath-based Dirichlet energy over all length-2 metapaths of `target`.
pub fn mde(g: &HetGraph, target: &str, level: Level) -> Result<MetricReport> {
    report(g, target, level, false, true)
}

/// Both metrics; a side whose inputs are missing (no labels, no features) is left `None`.
pub fn metapath_metrics(g: &HetGraph, target: &str, level: Level) -> Result<MetricReport> {
    let t = g.node_type_index(target)?;
    let labels = g.labels.target_type == target && g.labels.num_classes > 0;
    let energy = g.node_types[t].features.is_some();
    report(g, target, level, labels, energy)
}

/// Per-node local metric averaged over every length-2 metapath of the labeled
/// target type.
pub fn local_metric(g: &HetGraph, kind: LocalKind) -> Result<LocalMetricVector> {
    let target = g.labels.target_type.clone();
    let paths = enumerate_length2(g, &target)?;
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "no length-2 metapaths start and end at `{target}`"
        )));
    }
    let t = g.node_type_index(&target)?;
    let mut per_path = Vec::with_capacity(paths.len());
    for p in &paths {
        let ig = induce_subgraph(g, p)?;
        per_path.push(match kind {
            LocalKind::LabelHomophily => node_label_homophily(&ig, &g.labels).1,
            LocalKind::DirichletEnergy => {
                let x = g.node_types[t]
                    .features
                    .as_ref()
                    .ok_or_else(|| Error::Data(format!("node type `{target}` has no features")))?;
                node_dirichlet_energy(&ig, x)?.1
            }
        });
    }
    LocalMetricVector::average(&per_path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalKind {
    #[serde(rename = "mlh")]
    LabelHomophily,
    #[serde(rename = "mde")]
    DirichletEnergy,
}

impl std::str::FromStr for LocalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlh" => Ok(LocalKind::LabelHomophily),
            "mde" => Ok(LocalKind::DirichletEnergy),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}` (mlh|mde)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketScheme {
    /// Bucket `i` holds values in `(edges[i], edges[i + 1]]`; the first bucket
    /// also takes `edges[0]`. Values outside the range clamp to the end buckets.
    FixedEdges(Vec<f64>),
    /// `k` buckets split at empirical quantiles.
    Quantiles(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Buckets {
    /// `(low, high)` bounds per bucket.
    pub ranges: Vec<(f64, f64)>,
    pub members: Vec<Vec<usize>>,
    /// Nodes without a local value.
    pub isolated: Vec<usize>,
}

impl Buckets {
    /// Bucket index per node; `None` for isolated nodes.
    pub fn assignment(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (b, m) in self.members.iter().enumerate() {
            for &u in m {
                out[u] = Some(b);
            }
        }
        out
    }
}

/// Partitions the non-isolated nodes by local value. A value equal to a
/// boundary goes to the lower bucket.
pub fn bucket_nodes(values: &LocalMetricVector, scheme: &BucketScheme) -> Result<Buckets> {
    let present: Vec<(usize, f64)> = values
        .values
        .iter()
        .enumerate()
        .filter_map(|(u, v)| v.map(|v| (u, v)))
        .collect();
    if present.is_empty() {
        return Err(Error::Data("no non-isolated nodes to bucket".into()));
    }
    let isolated = values
        .values
        .iter()
        .enumerate()
        .filter_map(|(u, v)| v.is_none().then_some(u))
        .collect();

    let bounds: Vec<f64> = match scheme {
        BucketScheme::FixedEdges(edges) => {
            if edges.len() < 2 || edges.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::InvalidArgument(
                    "bucket edges must be >= 2 non-decreasing values".into(),
                ));
            }
            edges.clone()
        }
        BucketScheme::Quantiles(k) => {
            if *k == 0 {
                return Err(Error::InvalidArgument("quantile bucket count must be positive".into()));
            }
            let mut sorted: Vec<f64> = present.iter().map(|&(_, v)| v).collect();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let mut b = Vec::with_capacity(k + 1);
            b.push(sorted[0]);
            for i in 1..*k {
                // nearest-rank quantile i/k
                let rank = (i * n).div_ceil(*k);
                b.push(sorted[rank.max(1) - 1]);
            }
            b.push(sorted[n - 1]);
            b
        }
    };
    let n_buckets = bounds.len() - 1;
    let interior = &bounds[1..n_buckets];
    let mut members = vec![Vec::new(); n_buckets];
    for (u, v) in present {
        let b = interior.iter().filter(|&&e| v > e).count();
        members[b].push(u);
    }
    let ranges = bounds.windows(2).map(|w| (w[0], w[1])).collect();
    Ok(Buckets {
        ranges,
        members,
        isolated,
    })
}
