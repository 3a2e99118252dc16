use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::train::fmt_float;
use crate::error::{Error, Result};
use crate::hetgraph::{HetGraph, Split};
use crate::homophily::{bucket_nodes, local_metric, BucketScheme, LocalKind, LocalMetricVector};
use crate::numcore::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    /// `(low, high)`; absent for the isolated row.
    pub range: Option<(f64, f64)>,
    pub nodes: usize,
    /// Absent when the bucket is empty.
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub kind: LocalKind,
    pub rows: Vec<BucketRow>,
    /// Test nodes with no metapath neighbor in any metapath.
    pub isolated: BucketRow,
}

impl BucketReport {
    pub fn total_nodes(&self) -> usize {
        self.rows.iter().map(|r| r.nodes).sum::<usize>() + self.isolated.nodes
    }

    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
        let mut s = String::from("bucket,low,high,nodes,micro_f1,macro_f1\n");
        for (i, r) in self.rows.iter().chain(std::iter::once(&self.isolated)).enumerate() {
            let name = if i == self.rows.len() {
                "isolated".to_string()
            } else {
                i.to_string()
            };
            s.push_str(&format!(
                "{name},{},{},{},{},{}\n",
                opt(r.range.map(|x| x.0)),
                opt(r.range.map(|x| x.1)),
                r.nodes,
                opt(r.micro_f1),
                opt(r.macro_f1)
            ));
        }
        s
    }
}

fn row(g: &HetGraph, logits: &Tensor, range: Option<(f64, f64)>, nodes: &[usize]) -> Result<BucketRow> {
    let (micro_f1, macro_f1) = if nodes.is_empty() {
        (None, None)
    } else {
        let s = evaluate(logits, &g.labels, nodes)?;
        (Some(s.micro_f1), Some(s.macro_f1))
    };
    Ok(BucketRow {
        range,
        nodes: nodes.len(),
        micro_f1,
        macro_f1,
    })
}

/// Buckets test nodes by their local metric and scores each bucket.
pub fn bucket_report(g: &HetGraph, logits: &Tensor, kind: LocalKind, scheme: &BucketScheme) -> Result<BucketReport> {
    let test = g.splits.nodes(Split::Test);
    if test.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let local = local_metric(g, kind)?;
    bucket_report_with(g, logits, kind, &local, &test, scheme)
}

/// [`bucket_report`] over precomputed local values and an explicit node set.
pub fn bucket_report_with(
    g: &HetGraph,
    logits: &Tensor,
    kind: LocalKind,
    local: &LocalMetricVector,
    nodes: &[usize],
    scheme: &BucketScheme,
) -> Result<BucketReport> {
    let sub = LocalMetricVector {
        values: nodes.iter().map(|&u| local.values[u]).collect(),
    };
    let lift = |idx: &[usize]| idx.iter().map(|&i| nodes[i]).collect::<Vec<_>>();
    let (rows, isolated) = if sub.values.iter().all(Option::is_none) {
        (Vec::new(), lift(&(0..nodes.len()).collect::<Vec<_>>()))
    } else {
        let b = bucket_nodes(&sub, scheme)?;
        let rows = b
            .ranges
            .iter()
            .zip(&b.members)
            .map(|(&r, m)| row(g, logits, Some(r), &lift(m)))
            .collect::<Result<Vec<_>>>()?;
        (rows, lift(&b.isolated))
    };
    Ok(BucketReport {
        kind,
        rows,
        isolated: row(g, logits, None, &isolated)?,
    })
}
