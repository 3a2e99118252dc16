//! Typed heterogeneous graph storage.
//!
//! A [`HetGraph`] holds one [`NodeTypeTable`] per node type and one
//! [`Relation`] per edge type. Node ids are dense and 0-based within their
//! type; every relation is a directed bipartite adjacency between two types.
//! Symmetric datasets declare `add_reverse` in the manifest, which makes the
//! loader synthesise a transposed `rev_<name>` relation.

mod csr;
mod io;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use csr::Csr;
pub use io::{load_graph, load_graph_with_stats, save_graph, LoadStats, Manifest, MANIFEST_FILE};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NodeTypeTable {
    pub name: String,
    pub count: usize,
    /// `count x dim` feature matrix, absent for featureless types.
    pub features: Option<Array2<f64>>,
    pub dim: usize,
}

impl NodeTypeTable {
    pub fn featureless(name: impl Into<String>, count: usize) -> Self {
        NodeTypeTable {
            name: name.into(),
            count,
            features: None,
            dim: 0,
        }
    }

    pub fn with_features(name: impl Into<String>, features: Array2<f64>) -> Self {
        NodeTypeTable {
            name: name.into(),
            count: features.nrows(),
            dim: features.ncols(),
            features: Some(features),
        }
    }

    pub fn is_featureless(&self) -> bool {
        self.features.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Relation {
    pub name: String,
    pub src_type: String,
    pub dst_type: String,
    pub adjacency: Csr,
    /// Set on synthesised reverse relations; names the relation this one transposes.
    pub reverse_of: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Class assignments for the target node type.
///
/// Stored densely: `assignments[u]` is the (sorted) class set of node `u`,
/// empty when `u` is unlabeled. Single-label tables hold at most one class
/// per node.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelTable {
    pub target_type: String,
    pub num_classes: usize,
    pub multilabel: bool,
    assignments: Vec<Vec<usize>>,
}

impl LabelTable {
    pub fn new(target_type: impl Into<String>, num_classes: usize, multilabel: bool, n_nodes: usize) -> Self {
        LabelTable {
            target_type: target_type.into(),
            num_classes,
            multilabel,
            assignments: vec![Vec::new(); n_nodes],
        }
    }

    /// Single-label table from a dense class vector.
    pub fn from_classes(target_type: impl Into<String>, num_classes: usize, classes: &[usize]) -> Self {
        LabelTable {
            target_type: target_type.into(),
            num_classes,
            multilabel: false,
            assignments: classes.iter().map(|&c| vec![c]).collect(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.assignments.len()
    }

    pub fn set(&mut self, node: usize, mut classes: Vec<usize>) {
        classes.sort_unstable();
        classes.dedup();
        self.assignments[node] = classes;
    }

    pub fn clear(&mut self, node: usize) {
        self.assignments[node].clear();
    }

    pub fn classes_of(&self, node: usize) -> &[usize] {
        self.assignments.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// First (for single-label tables: the only) class of `node`.
    pub fn class_of(&self, node: usize) -> Option<usize> {
        self.classes_of(node).first().copied()
    }

    pub fn is_labeled(&self, node: usize) -> bool {
        !self.classes_of(node).is_empty()
    }

    pub fn labeled_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.assignments.len()).filter(move |&u| self.is_labeled(u))
    }

    /// Label agreement between two nodes; `None` if either is unlabeled.
    /// Multilabel agreement means the class sets intersect.
    pub fn agree(&self, u: usize, v: usize) -> Option<bool> {
        let (a, b) = (self.classes_of(u), self.classes_of(v));
        if a.is_empty() || b.is_empty() {
            return None;
        }
        if !self.multilabel {
            return Some(a[0] == b[0]);
        }
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Equal => return Some(true),
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        Some(false)
    }
}

/// Node id to split assignment for the target type.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitTable {
    assignment: Vec<Option<Split>>,
}

impl SplitTable {
    pub fn new(n_nodes: usize) -> Self {
        SplitTable {
            assignment: vec![None; n_nodes],
        }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn set(&mut self, node: usize, split: Split) -> Option<Split> {
        self.assignment[node].replace(split)
    }

    pub fn get(&self, node: usize) -> Option<Split> {
        self.assignment.get(node).copied().flatten()
    }

    pub fn nodes(&self, split: Split) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&u| self.assignment[u] == Some(split))
            .collect()
    }

    pub fn members(&self) -> impl Iterator<Item = (usize, Split)> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(u, s)| s.map(|s| (u, s)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HetGraph {
    pub node_types: Vec<NodeTypeTable>,
    pub relations: Vec<Relation>,
    pub labels: LabelTable,
    pub splits: SplitTable,
}

impl HetGraph {
    /// Assembles a graph and checks cross-references. Structural invariants
    /// (row order, bounds, reverse consistency) are checked by [`validate`].
    pub fn new(
        node_types: Vec<NodeTypeTable>,
        relations: Vec<Relation>,
        labels: LabelTable,
        splits: SplitTable,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &node_types {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::DuplicateNodeType(t.name.clone()));
            }
        }
        let mut rel_seen = HashSet::new();
        for r in &relations {
            if !rel_seen.insert(r.name.as_str()) {
                return Err(Error::DuplicateRelation(r.name.clone()));
            }
            for ty in [&r.src_type, &r.dst_type] {
                if !seen.contains(ty.as_str()) {
                    return Err(Error::UnknownNodeType(ty.clone()));
                }
            }
        }
        if !seen.contains(labels.target_type.as_str()) {
            return Err(Error::UnknownNodeType(labels.target_type.clone()));
        }
        let g = HetGraph {
            node_types,
            relations,
            labels,
            splits,
        };
        if g.node_types.len() + g.relations.len() <= 2 {
            log::warn!(
                "homogeneity check: |A|+|R| must exceed 2 (got {} node types, {} relations)",
                g.node_types.len(),
                g.relations.len()
            );
        }
        Ok(g)
    }

    pub fn node_type_index(&self, name: &str) -> Result<usize> {
        self.node_types
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::UnknownNodeType(name.to_string()))
    }

    pub fn relation_index(&self, name: &str) -> Result<usize> {
        self.relations
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    pub fn relation(&self, name: &str) -> Result<&Relation> {
        self.relation_index(name).map(|i| &self.relations[i])
    }

    pub fn node_count(&self, type_name: &str) -> Result<usize> {
        self.node_type_index(type_name).map(|i| self.node_types[i].count)
    }

    pub fn target_type_index(&self) -> usize {
        self.node_type_index(&self.labels.target_type)
            .expect("target type checked at construction")
    }

    /// Source and destination type indices of a relation.
    pub fn endpoint_types(&self, rel: usize) -> (usize, usize) {
        let r = &self.relations[rel];
        (
            self.node_type_index(&r.src_type).expect("checked at construction"),
            self.node_type_index(&r.dst_type).expect("checked at construction"),
        )
    }

    /// Index of the relation that transposes `rel`, in either direction.
    pub fn twin(&self, rel: usize) -> Option<usize> {
        let r = &self.relations[rel];
        if let Some(base) = &r.reverse_of {
            return self.relation_index(base).ok();
        }
        self.relations
            .iter()
            .position(|other| other.reverse_of.as_deref() == Some(r.name.as_str()))
    }

    /// Sorted out-neighbors of `u` under `rel`.
    pub fn neighbors(&self, rel: &str, u: usize) -> Result<&[usize]> {
        let r = self.relation(rel)?;
        if u >= r.adjacency.n_rows() {
            return Err(Error::IdOutOfRange {
                what: format!("{} (source of {})", r.src_type, r.name),
                id: u,
                bound: r.adjacency.n_rows(),
            });
        }
        Ok(r.adjacency.row(u))
    }

    /// `(directed, undirected)` edge counts; a relation and its reverse twin
    /// contribute their pairs once to the undirected count.
    pub fn edge_counts(&self) -> (usize, usize) {
        let directed = self.relations.iter().map(|r| r.adjacency.nnz()).sum();
        let undirected = self
            .relations
            .iter()
            .filter(|r| r.reverse_of.is_none())
            .map(|r| r.adjacency.nnz())
            .sum();
        (directed, undirected)
    }

    pub fn total_nodes(&self) -> usize {
        self.node_types.iter().map(|t| t.count).sum()
    }

    /// Offsets into a global id space where type `t` occupies
    /// `offsets[t]..offsets[t] + count`.
    pub fn type_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.node_types
            .iter()
            .map(|t| {
                let o = acc;
                acc += t.count;
                o
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub kind: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: &'static str, detail: String) {
        self.violations.push(Violation { kind, detail });
    }

    pub fn count(&self, kind: &str) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

/// Checks every structural invariant and reports violations instead of failing.
pub fn validate(g: &HetGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let counts: BTreeMap<&str, usize> = g.node_types.iter().map(|t| (t.name.as_str(), t.count)).collect();

    for t in &g.node_types {
        if let Some(x) = &t.features {
            if x.nrows() != t.count {
                report.push(
                    "feature rows mismatch",
                    format!("{}: {} rows for {} nodes", t.name, x.nrows(), t.count),
                );
            }
        }
    }

    for r in &g.relations {
        let (Some(&ns), Some(&nd)) = (counts.get(r.src_type.as_str()), counts.get(r.dst_type.as_str())) else {
            report.push("unknown endpoint type", r.name.clone());
            continue;
        };
        let adj = &r.adjacency;
        if adj.n_rows() != ns || adj.n_cols() != nd {
            report.push(
                "adjacency shape mismatch",
                format!("{}: {}x{} for {}x{}", r.name, adj.n_rows(), adj.n_cols(), ns, nd),
            );
        }
        for u in 0..adj.n_rows() {
            let row = adj.row(u);
            if row.windows(2).any(|w| w[0] > w[1]) {
                report.push("row not sorted", format!("{} row {}", r.name, u));
            } else if row.windows(2).any(|w| w[0] == w[1]) {
                report.push("row has duplicates", format!("{} row {}", r.name, u));
            }
            if let Some(&v) = row.iter().find(|&&v| v >= nd) {
                report.push("id out of range", format!("{} edge ({}, {})", r.name, u, v));
            }
        }
        if let Some(base) = &r.reverse_of {
            match g.relations.iter().find(|o| &o.name == base) {
                None => report.push("reverse inconsistency", format!("{} reverses missing {}", r.name, base)),
                Some(b) => {
                    let here: HashSet<(usize, usize)> = adj.pairs().collect();
                    let there: HashSet<(usize, usize)> = b.adjacency.pairs().map(|(u, v)| (v, u)).collect();
                    if here != there {
                        let missing = there.symmetric_difference(&here).count();
                        report.push(
                            "reverse inconsistency",
                            format!("{} vs {}: {} pairs differ", r.name, base, missing),
                        );
                    }
                }
            }
        }
    }

    let labels = &g.labels;
    if let Some(&n) = counts.get(labels.target_type.as_str()) {
        if labels.n_nodes() > n {
            report.push(
                "label id out of range",
                format!("{} labels for {} nodes", labels.n_nodes(), n),
            );
        }
    }
    for u in 0..labels.n_nodes() {
        if let Some(&c) = labels.classes_of(u).iter().find(|&&c| c >= labels.num_classes) {
            report.push("class out of range", format!("node {} class {}", u, c));
        }
    }
    for (u, s) in g.splits.members() {
        if !labels.is_labeled(u) {
            report.push("split member unlabeled", format!("node {} in {}", u, s.as_str()));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(pairs: &[(usize, usize)], n_src: usize, n_dst: usize) -> HetGraph {
        let (adj, _) = Csr::from_pairs(n_src, n_dst, pairs);
        HetGraph::new(
            vec![
                NodeTypeTable::featureless("a", n_src),
                NodeTypeTable::featureless("b", n_dst),
            ],
            vec![Relation {
                name: "r".into(),
                src_type: "a".into(),
                dst_type: "b".into(),
                adjacency: adj,
                reverse_of: None,
            }],
            LabelTable::new("a", 2, false, n_src),
            SplitTable::new(n_src),
        )
        .unwrap()
    }

    #[test]
    fn neighbors_single_edge() {
        let g = tiny(&[(0, 1)], 2, 2);
        assert_eq!(g.neighbors("r", 0).unwrap(), &[1]);
        assert!(g.neighbors("r", 1).unwrap().is_empty());
    }

    #[test]
    fn neighbors_star() {
        let g = tiny(&[(0, 3), (0, 1), (0, 2)], 1, 4);
        assert_eq!(g.neighbors("r", 0).unwrap(), &[1, 2, 3]);
    }

    #[test]
    fn neighbors_errors() {
        let g = tiny(&[(0, 1)], 2, 2);
        assert!(matches!(g.neighbors("nope", 0), Err(Error::UnknownRelation(_))));
        assert!(matches!(g.neighbors("r", 2), Err(Error::IdOutOfRange { .. })));
    }

    #[test]
    fn unsorted_row_reported_once() {
        let mut g = tiny(&[], 2, 3);
        g.relations[0].adjacency = Csr::from_raw_parts(2, 3, vec![0, 2, 2], vec![2, 1]);
        let report = validate(&g);
        assert_eq!(report.violations.len(), 1, "{:?}", report);
        assert_eq!(report.violations[0].kind, "row not sorted");
    }

    #[test]
    fn reverse_inconsistency_detected() {
        let mut g = tiny(&[(0, 0), (1, 1)], 2, 2);
        let (rev, _) = Csr::from_pairs(2, 2, &[(0, 0)]);
        g.relations.push(Relation {
            name: "rev_r".into(),
            src_type: "b".into(),
            dst_type: "a".into(),
            adjacency: rev,
            reverse_of: Some("r".into()),
        });
        let report = validate(&g);
        assert_eq!(report.count("reverse inconsistency"), 1);
        assert_eq!(g.twin(0), Some(1));
        assert_eq!(g.twin(1), Some(0));
    }

    #[test]
    fn multilabel_agreement_is_intersection() {
        let mut l = LabelTable::new("a", 4, true, 3);
        l.set(0, vec![0, 2]);
        l.set(1, vec![3, 2]);
        l.set(2, vec![1]);
        assert_eq!(l.agree(0, 1), Some(true));
        assert_eq!(l.agree(0, 2), Some(false));
        l.clear(2);
        assert_eq!(l.agree(0, 2), None);
    }
}
