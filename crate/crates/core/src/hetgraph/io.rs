//! Manifest + TSV ingestion and serialisation.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Csr, HetGraph, LabelTable, NodeTypeTable, Relation, Split, SplitTable};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub node_types: Vec<NodeTypeEntry>,
    #[serde(default)]
    pub relations: Vec<RelationEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelsEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<SplitsEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeTypeEntry {
    pub name: String,
    pub count: usize,
    #[serde(default)]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationEntry {
    pub name: String,
    pub src: String,
    pub dst: String,
    pub edges: String,
    #[serde(default)]
    pub add_reverse: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelsEntry {
    pub node_type: String,
    pub classes: usize,
    pub file: String,
    #[serde(default)]
    pub multilabel: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitsEntry {
    pub file: String,
}

/// Bookkeeping gathered while loading.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadStats {
    /// Duplicate input edges dropped, per relation.
    pub duplicate_edges: BTreeMap<String, usize>,
    pub directed_edges: usize,
    pub undirected_edges: usize,
    pub featureless_types: Vec<String>,
}

fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            None
        } else {
            Some((i + 1, line.split('\t').collect()))
        }
    })
}

fn parse_id(path: &Path, line: usize, field: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::malformed(path, line, format!("expected a node id, got `{field}`")))
}

fn check_range(what: &str, id: usize, bound: usize) -> Result<()> {
    if id >= bound {
        Err(Error::IdOutOfRange {
            what: what.to_string(),
            id,
            bound,
        })
    } else {
        Ok(())
    }
}

fn read_edges(path: &Path, rel: &str, n_src: usize, n_dst: usize) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut pairs = Vec::new();
    for (line, fields) in rows(&text) {
        if fields.len() != 2 {
            return Err(Error::malformed(
                path,
                line,
                format!("expected 2 fields, got {}", fields.len()),
            ));
        }
        let u = parse_id(path, line, fields[0])?;
        let v = parse_id(path, line, fields[1])?;
        check_range(&format!("source of {rel}"), u, n_src)?;
        check_range(&format!("destination of {rel}"), v, n_dst)?;
        pairs.push((u, v));
    }
    Ok(pairs)
}

fn read_features(path: &Path, ty: &str, count: usize, dim: usize) -> Result<Array2<f64>> {
    let text = read(path)?;
    let mut x = Array2::zeros((count, dim));
    let mut seen = vec![false; count];
    for (line, fields) in rows(&text) {
        if fields.len() != dim + 1 {
            return Err(Error::malformed(
                path,
                line,
                format!("expected id plus {dim} values, got {} fields", fields.len()),
            ));
        }
        let u = parse_id(path, line, fields[0])?;
        check_range(&format!("feature row of {ty}"), u, count)?;
        if std::mem::replace(&mut seen[u], true) {
            return Err(Error::malformed(
                path,
                line,
                format!("duplicate feature row for node {u}"),
            ));
        }
        for (j, f) in fields[1..].iter().enumerate() {
            x[[u, j]] = f
                .trim()
                .parse()
                .map_err(|_| Error::malformed(path, line, format!("bad float `{f}`")))?;
        }
    }
    if let Some(u) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!(
            "{}: missing feature row for {ty} node {u}",
            path.display()
        )));
    }
    Ok(x)
}

fn read_labels(path: &Path, entry: &LabelsEntry, count: usize) -> Result<LabelTable> {
    let text = read(path)?;
    let mut table = LabelTable::new(&entry.node_type, entry.classes, entry.multilabel, count);
    for (line, fields) in rows(&text) {
        if fields.len() != 2 {
            return Err(Error::malformed(
                path,
                line,
                format!("expected 2 fields, got {}", fields.len()),
            ));
        }
        let u = parse_id(path, line, fields[0])?;
        check_range(&format!("label row of {}", entry.node_type), u, count)?;
        if table.is_labeled(u) {
            return Err(Error::malformed(
                path,
                line,
                format!("duplicate label row for node {u}"),
            ));
        }
        let parts: Vec<&str> = fields[1].split(',').collect();
        if !entry.multilabel && parts.len() != 1 {
            return Err(Error::malformed(path, line, "class list in a single-label file"));
        }
        let mut classes = Vec::with_capacity(parts.len());
        for p in parts {
            let c: usize = p
                .trim()
                .parse()
                .map_err(|_| Error::malformed(path, line, format!("bad class `{p}`")))?;
            check_range("class index", c, entry.classes)?;
            classes.push(c);
        }
        table.set(u, classes);
    }
    Ok(table)
}

fn read_splits(path: &Path, labels: &LabelTable) -> Result<SplitTable> {
    let text = read(path)?;
    let mut splits = SplitTable::new(labels.n_nodes());
    for (line, fields) in rows(&text) {
        if fields.len() != 2 {
            return Err(Error::malformed(
                path,
                line,
                format!("expected 2 fields, got {}", fields.len()),
            ));
        }
        let u = parse_id(path, line, fields[0])?;
        check_range("split row", u, labels.n_nodes())?;
        let s = Split::parse(fields[1].trim())
            .ok_or_else(|| Error::malformed(path, line, format!("unknown split `{}`", fields[1])))?;
        if !labels.is_labeled(u) {
            return Err(Error::UnlabeledSplitMember(u));
        }
        if splits.set(u, s).is_some() {
            return Err(Error::malformed(path, line, format!("node {u} assigned to two splits")));
        }
    }
    Ok(splits)
}

/// Loads and validates a graph from a manifest file (or a directory holding
/// `manifest.json`).
pub fn load_graph(manifest_path: impl AsRef<Path>) -> Result<HetGraph> {
    load_graph_with_stats(manifest_path).map(|(g, _)| g)
}

pub fn load_graph_with_stats(manifest_path: impl AsRef<Path>) -> Result<(HetGraph, LoadStats)> {
    let path = resolve_manifest(manifest_path.as_ref());
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest: Manifest = serde_json::from_str(&read(&path)?).map_err(|source| Error::Manifest {
        path: path.clone(),
        source,
    })?;

    let mut stats = LoadStats::default();
    let mut node_types = Vec::with_capacity(manifest.node_types.len());
    let mut counts = BTreeMap::new();
    for nt in &manifest.node_types {
        if counts.insert(nt.name.clone(), nt.count).is_some() {
            return Err(Error::DuplicateNodeType(nt.name.clone()));
        }
        let table = match &nt.features {
            Some(file) => {
                let x = read_features(&base.join(file), &nt.name, nt.count, nt.dim)?;
                NodeTypeTable {
                    name: nt.name.clone(),
                    count: nt.count,
                    features: Some(x),
                    dim: nt.dim,
                }
            }
            None => {
                stats.featureless_types.push(nt.name.clone());
                NodeTypeTable::featureless(&nt.name, nt.count)
            }
        };
        node_types.push(table);
    }

    let count_of = |name: &str| {
        counts
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownNodeType(name.to_string()))
    };
    let mut relations = Vec::new();
    for re in &manifest.relations {
        let (ns, nd) = (count_of(&re.src)?, count_of(&re.dst)?);
        let pairs = read_edges(&base.join(&re.edges), &re.name, ns, nd)?;
        let (adj, dups) = Csr::from_pairs(ns, nd, &pairs);
        if dups > 0 {
            log::info!("relation {}: dropped {} duplicate edges", re.name, dups);
        }
        stats.duplicate_edges.insert(re.name.clone(), dups);
        if re.add_reverse {
            relations.push(Relation {
                name: format!("rev_{}", re.name),
                src_type: re.dst.clone(),
                dst_type: re.src.clone(),
                adjacency: adj.transpose(),
                reverse_of: Some(re.name.clone()),
            });
        }
        relations.push(Relation {
            name: re.name.clone(),
            src_type: re.src.clone(),
            dst_type: re.dst.clone(),
            adjacency: adj,
            reverse_of: None,
        });
        // keep each base relation ahead of its reverse twin
        if re.add_reverse {
            let n = relations.len();
            relations.swap(n - 2, n - 1);
        }
    }

    let labels = match &manifest.labels {
        Some(entry) => read_labels(&base.join(&entry.file), entry, count_of(&entry.node_type)?)?,
        None => {
            let first = manifest
                .node_types
                .first()
                .ok_or_else(|| Error::Data("manifest declares no node types".into()))?;
            LabelTable::new(&first.name, 0, false, first.count)
        }
    };
    let splits = match &manifest.splits {
        Some(entry) => read_splits(&base.join(&entry.file), &labels)?,
        None => SplitTable::new(labels.n_nodes()),
    };

    let g = HetGraph::new(node_types, relations, labels, splits)?;
    let report = super::validate(&g);
    if let Some(v) = report.violations.first() {
        return Err(Error::Data(format!(
            "{}: {} invariant violations, first: {v}",
            path.display(),
            report.violations.len()
        )));
    }
    let (d, u) = g.edge_counts();
    stats.directed_edges = d;
    stats.undirected_edges = u;
    log::info!(
        "loaded {}: {} node types, {} relations, {} directed / {} undirected edges",
        path.display(),
        g.node_types.len(),
        g.relations.len(),
        d,
        u
    );
    Ok((g, stats))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `g` as a manifest plus TSVs under `dir`.
///
/// Relations named `rev_<base>` that reverse `<base>` are folded back into an
/// `add_reverse` flag; any other relation is written verbatim.
pub fn save_graph(g: &HetGraph, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(p.clone(), e)
    };

    let mut node_entries = Vec::new();
    for t in &g.node_types {
        let features = match &t.features {
            Some(x) => {
                let file = format!("{}.features.tsv", t.name);
                let path = dir.join(&file);
                let mut w = create(&path)?;
                for (u, row) in x.outer_iter().enumerate() {
                    write!(w, "{u}").map_err(io_err(&path))?;
                    for v in row {
                        write!(w, "\t{v}").map_err(io_err(&path))?;
                    }
                    writeln!(w).map_err(io_err(&path))?;
                }
                finish(w, &path)?;
                Some(file)
            }
            None => None,
        };
        node_entries.push(NodeTypeEntry {
            name: t.name.clone(),
            count: t.count,
            dim: t.dim,
            features,
        });
    }

    let folded: HashSet<&str> = g
        .relations
        .iter()
        .filter(|r| r.reverse_of.as_ref().is_some_and(|b| r.name == format!("rev_{b}")))
        .map(|r| r.name.as_str())
        .collect();
    let mut rel_entries = Vec::new();
    for r in &g.relations {
        if folded.contains(r.name.as_str()) {
            continue;
        }
        let file = format!("{}.edges.tsv", r.name);
        let path = dir.join(&file);
        let mut w = create(&path)?;
        for (u, v) in r.adjacency.pairs() {
            writeln!(w, "{u}\t{v}").map_err(io_err(&path))?;
        }
        finish(w, &path)?;
        rel_entries.push(RelationEntry {
            name: r.name.clone(),
            src: r.src_type.clone(),
            dst: r.dst_type.clone(),
            edges: file,
            add_reverse: folded.contains(format!("rev_{}", r.name).as_str()),
        });
    }

    let labels = &g.labels;
    let labels_entry = if labels.num_classes > 0 {
        let file = "labels.tsv".to_string();
        let path = dir.join(&file);
        let mut w = create(&path)?;
        for u in labels.labeled_nodes() {
            let cs: Vec<String> = labels.classes_of(u).iter().map(|c| c.to_string()).collect();
            writeln!(w, "{u}\t{}", cs.join(",")).map_err(io_err(&path))?;
        }
        finish(w, &path)?;
        Some(LabelsEntry {
            node_type: labels.target_type.clone(),
            classes: labels.num_classes,
            file,
            multilabel: labels.multilabel,
        })
    } else {
        None
    };

    let splits_entry = if g.splits.members().next().is_some() {
        let file = "splits.tsv".to_string();
        let path = dir.join(&file);
        let mut w = create(&path)?;
        for (u, s) in g.splits.members() {
            writeln!(w, "{u}\t{}", s.as_str()).map_err(io_err(&path))?;
        }
        finish(w, &path)?;
        Some(SplitsEntry { file })
    } else {
        None
    };

    let manifest = Manifest {
        node_types: node_entries,
        relations: rel_entries,
        labels: labels_entry,
        splits: splits_entry,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
