//! Metapath algebra: enumeration, induced subgraphs, and the structure masks
//! used for masked metapath prediction.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::hetgraph::{Csr, HetGraph};

/// Longest metapath accepted by [`induce_subgraph`].
pub const MAX_INDUCE_STEPS: usize = 4;

/// Rejection attempts per requested negative pair.
const NEGATIVE_ATTEMPTS_PER_PAIR: usize = 100;

/// A type-compatible sequence of relations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Metapath {
    steps: Vec<String>,
    relations: Vec<usize>,
    /// `steps.len() + 1` node-type indices along the path.
    types: Vec<usize>,
    rendered: String,
}

impl Metapath {
    pub fn new<S: AsRef<str>>(g: &HetGraph, steps: &[S]) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::IncompatibleMetapath("empty metapath".into()));
        }
        let mut relations = Vec::with_capacity(steps.len());
        let mut types = Vec::with_capacity(steps.len() + 1);
        for (i, s) in steps.iter().enumerate() {
            let rel = g.relation_index(s.as_ref())?;
            let (src, dst) = g.endpoint_types(rel);
            if i == 0 {
                types.push(src);
            } else if types[i] != src {
                return Err(Error::IncompatibleMetapath(format!(
                    "step {} `{}` starts at {} but the previous step ends at {}",
                    i,
                    s.as_ref(),
                    g.node_types[src].name,
                    g.node_types[types[i]].name
                )));
            }
            types.push(dst);
            relations.push(rel);
        }
        let rendered = render_types(g, &types);
        Ok(Metapath {
            steps: steps.iter().map(|s| s.as_ref().to_string()).collect(),
            relations,
            types,
            rendered,
        })
    }

    /// Parses the comma-separated text form, e.g. `"writes,rev_writes"`.
    pub fn parse(g: &HetGraph, text: &str) -> Result<Self> {
        let steps: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        Metapath::new(g, &steps)
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    pub fn relations(&self) -> &[usize] {
        &self.relations
    }

    pub fn types(&self) -> &[usize] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn start_type(&self) -> usize {
        self.types[0]
    }

    pub fn is_symmetric(&self) -> bool {
        self.types.first() == self.types.last()
    }

    /// Type string such as `APA`.
    pub fn render(&self) -> &str {
        &self.rendered
    }

    /// Comma-separated relation names.
    pub fn text(&self) -> String {
        self.steps.join(",")
    }
}

/// Initials when they identify node types unambiguously, else `a-b-a`.
fn render_types(g: &HetGraph, types: &[usize]) -> String {
    let initials: Vec<Option<char>> = g
        .node_types
        .iter()
        .map(|t| t.name.chars().next().map(|c| c.to_ascii_uppercase()))
        .collect();
    let unique =
        initials.iter().collect::<HashSet<_>>().len() == initials.len() && initials.iter().all(Option::is_some);
    if unique {
        types.iter().map(|&t| initials[t].unwrap()).collect()
    } else {
        types
            .iter()
            .map(|&t| g.node_types[t].name.as_str())
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// All length-2 metapaths from `target` back to `target`, sorted by relation
/// names. A pair of reverse twins is kept only in `(base, rev_base)` order.
pub fn enumerate_length2(g: &HetGraph, target: &str) -> Result<Vec<Metapath>> {
    let t = g.node_type_index(target)?;
    let mut pairs = Vec::new();
    for (r1, rel1) in g.relations.iter().enumerate() {
        let (s1, d1) = g.endpoint_types(r1);
        if s1 != t {
            continue;
        }
        for (r2, rel2) in g.relations.iter().enumerate() {
            let (s2, d2) = g.endpoint_types(r2);
            if s2 != d1 || d2 != t {
                continue;
            }
            // (rev_R, R) duplicates (R, rev_R) when both are type-valid
            if rel1.reverse_of.as_deref() == Some(rel2.name.as_str()) {
                continue;
            }
            pairs.push((rel1.name.clone(), rel2.name.clone()));
        }
    }
    pairs.sort();
    pairs.into_iter().map(|(a, b)| Metapath::new(g, &[a, b])).collect()
}

/// The simple undirected graph a symmetric metapath induces on its endpoint type.
#[derive(Clone, Debug, PartialEq)]
pub struct InducedGraph {
    pub node_type: String,
    pub node_count: usize,
    /// Sorted `(u, v)` pairs with `u < v`.
    pub edges: Vec<(usize, usize)>,
    /// Symmetric adjacency holding both orientations of every edge.
    pub adjacency: Csr,
    pub metapath: String,
}

impl InducedGraph {
    /// Builds from an arbitrary pair list; self-pairs are dropped and each
    /// unordered pair is kept once.
    pub fn from_pairs(
        node_type: impl Into<String>,
        node_count: usize,
        pairs: &[(usize, usize)],
        metapath: impl Into<String>,
    ) -> Self {
        let set: BTreeSet<(usize, usize)> = pairs
            .iter()
            .filter(|(u, v)| u != v)
            .map(|&(u, v)| (u.min(v), u.max(v)))
            .collect();
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let both: Vec<(usize, usize)> = edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
        let (adjacency, _) = Csr::from_pairs(node_count, node_count, &both);
        InducedGraph {
            node_type: node_type.into(),
            node_count,
            edges,
            adjacency,
            metapath: metapath.into(),
        }
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        self.adjacency.row(u)
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency.degree(u)
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Writes one `u<TAB>v` line per undirected edge.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for &(u, v) in &self.edges {
            writeln!(w, "{u}\t{v}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Boolean sparse composition of the step adjacencies, with self-loops
/// removed and the result symmetrised.
pub fn induce_subgraph(g: &HetGraph, p: &Metapath) -> Result<InducedGraph> {
    if !p.is_symmetric() {
        return Err(Error::IncompatibleMetapath(format!(
            "{} does not end where it starts",
            p.render()
        )));
    }
    if p.len() > MAX_INDUCE_STEPS {
        return Err(Error::IncompatibleMetapath(format!(
            "{} has {} steps, induction supports at most {MAX_INDUCE_STEPS}",
            p.render(),
            p.len()
        )));
    }
    let mut reach = g.relations[p.relations()[0]].adjacency.clone();
    for &rel in &p.relations()[1..] {
        reach = reach.bool_compose(&g.relations[rel].adjacency);
    }
    let t = &g.node_types[p.start_type()];
    let pairs: Vec<(usize, usize)> = reach.pairs().collect();
    Ok(InducedGraph::from_pairs(&t.name, t.count, &pairs, p.render()))
}

/// A node addressed by type index and in-type id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub ty: usize,
    pub id: usize,
}

/// A reconstruction target: one consecutive node pair on a path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PathPair {
    pub src: NodeRef,
    pub dst: NodeRef,
    /// Relation the pair belongs to (the traversed step relation).
    pub relation: usize,
    /// Index of the originating metapath in the caller's list.
    pub path: usize,
}

/// Per-relation adjacency consumed by message passing.
#[derive(Clone, Debug)]
pub struct GraphView {
    pub adjacency: Vec<Arc<Csr>>,
}

impl GraphView {
    pub fn full(g: &HetGraph) -> Self {
        GraphView {
            adjacency: g.relations.iter().map(|r| Arc::new(r.adjacency.clone())).collect(),
        }
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(|a| a.nnz()).sum()
    }
}

/// One sample of the structure mask.
#[derive(Clone, Debug)]
pub struct MaskPlan {
    pub seed: u64,
    pub rho_plus: Vec<PathPair>,
    /// Removed pairs per relation, sorted; reverse twins are included.
    pub masked_edges: Vec<Vec<(usize, usize)>>,
    pub rho_minus: Vec<PathPair>,
    pub visible: GraphView,
    /// Start nodes from which no step could be taken.
    pub skipped_starts: usize,
}

impl MaskPlan {
    /// A plan that masks nothing.
    pub fn unmasked(g: &HetGraph, seed: u64) -> Self {
        MaskPlan {
            seed,
            rho_plus: Vec::new(),
            masked_edges: vec![Vec::new(); g.relations.len()],
            rho_minus: Vec::new(),
            visible: GraphView::full(g),
            skipped_starts: 0,
        }
    }

    /// Builds a plan that removes exactly `masked` (plus reverse twins) with no
    /// reconstruction targets.
    pub fn from_masked(g: &HetGraph, seed: u64, masked: &[(usize, usize, usize)]) -> Self {
        let mut removed: Vec<HashSet<(usize, usize)>> = vec![HashSet::new(); g.relations.len()];
        for &(rel, u, v) in masked {
            removed[rel].insert((u, v));
            if let Some(tw) = g.twin(rel) {
                removed[tw].insert((v, u));
            }
        }
        assemble(g, seed, Vec::new(), removed, 0)
    }
}

fn assemble(
    g: &HetGraph,
    seed: u64,
    rho_plus: Vec<PathPair>,
    removed: Vec<HashSet<(usize, usize)>>,
    skipped_starts: usize,
) -> MaskPlan {
    let visible = GraphView {
        adjacency: g
            .relations
            .iter()
            .zip(&removed)
            .map(|(r, rm)| Arc::new(r.adjacency.without(rm)))
            .collect(),
    };
    let masked_edges = removed
        .into_iter()
        .map(|rm| {
            let mut v: Vec<(usize, usize)> = rm.into_iter().collect();
            v.sort_unstable();
            v
        })
        .collect();
    MaskPlan {
        seed,
        rho_plus,
        masked_edges,
        rho_minus: Vec::new(),
        visible,
        skipped_starts,
    }
}

fn common_start(paths: &[Metapath]) -> Result<usize> {
    let first = paths
        .first()
        .ok_or_else(|| Error::InvalidArgument("metapath set is empty".into()))?;
    if let Some(p) = paths.iter().find(|p| p.start_type() != first.start_type()) {
        return Err(Error::InvalidArgument(format!(
            "metapaths start at different types ({} vs {})",
            first.render(),
            p.render()
        )));
    }
    Ok(first.start_type())
}

/// Samples masked metapath walks.
///
/// `ceil(mask_ratio * n)` start nodes of the metapaths' common start type are
/// drawn without replacement. From each, one walk follows a uniformly chosen
/// metapath for up to `walk_len` repetitions, stepping to a uniform neighbor
/// in `g`. Every traversed edge is masked together with its reverse twin, and
/// each traversed pair (deduplicated per undirected edge) becomes a ρ⁺ target.
/// `rho_minus` is left empty; see [`sample_negatives`].
pub fn sample_mask<R: Rng + ?Sized>(
    g: &HetGraph,
    paths: &[Metapath],
    mask_ratio: f64,
    walk_len: usize,
    seed: u64,
    rng: &mut R,
) -> Result<MaskPlan> {
    let start_type = common_start(paths)?;
    if !(0.0..=1.0).contains(&mask_ratio) {
        return Err(Error::InvalidArgument(format!(
            "mask_ratio {mask_ratio} outside [0, 1]"
        )));
    }
    if walk_len == 0 {
        return Err(Error::InvalidArgument("walk_len must be positive".into()));
    }
    let n = g.node_types[start_type].count;
    if n == 0 {
        return Err(Error::Data(format!(
            "node type {} has no nodes",
            g.node_types[start_type].name
        )));
    }

    let n_starts = ((mask_ratio * n as f64).ceil() as usize).min(n);
    let starts = index::sample(rng, n, n_starts);
    let mut removed: Vec<HashSet<(usize, usize)>> = vec![HashSet::new(); g.relations.len()];
    let mut seen_pairs = HashSet::new();
    let mut rho_plus = Vec::new();
    let mut skipped = 0;

    for start in starts.iter() {
        let pi = rng.random_range(0..paths.len());
        let path = &paths[pi];
        let mut cur = start;
        let mut steps_taken = 0;
        'walk: for _ in 0..walk_len {
            for (step, &rel) in path.relations().iter().enumerate() {
                let nbrs = g.relations[rel].adjacency.row(cur);
                if nbrs.is_empty() {
                    break 'walk;
                }
                let next = nbrs[rng.random_range(0..nbrs.len())];
                removed[rel].insert((cur, next));
                let twin = g.twin(rel);
                if let Some(tw) = twin {
                    removed[tw].insert((next, cur));
                }
                // key the pair by its base-orientation edge so a walk that
                // returns along the same edge yields one target
                let key = match (g.relations[rel].reverse_of.is_some(), twin) {
                    (true, Some(tw)) => (tw, next, cur),
                    _ => (rel, cur, next),
                };
                if seen_pairs.insert(key) {
                    rho_plus.push(PathPair {
                        src: NodeRef {
                            ty: path.types()[step],
                            id: cur,
                        },
                        dst: NodeRef {
                            ty: path.types()[step + 1],
                            id: next,
                        },
                        relation: rel,
                        path: pi,
                    });
                }
                cur = next;
                steps_taken += 1;
            }
        }
        if steps_taken == 0 {
            skipped += 1;
            log::debug!(
                "mask walk impossible from {} node {start}",
                g.node_types[start_type].name
            );
        }
    }
    if skipped > 0 {
        log::debug!("{skipped} of {n_starts} mask walks could not start");
    }
    Ok(assemble(g, seed, rho_plus, removed, skipped))
}

/// Samples up to `count` distinct type-conforming non-adjacent pairs.
///
/// Each attempt picks a uniform metapath, a uniform step of it, and uniform
/// endpoints from the step's source and destination types; the pair is
/// rejected if it is an edge of the step relation in `g` or was already drawn.
/// At most `100 * count` attempts are made.
pub fn sample_negatives<R: Rng + ?Sized>(g: &HetGraph, paths: &[Metapath], count: usize, rng: &mut R) -> Vec<PathPair> {
    let mut out = Vec::with_capacity(count);
    if paths.is_empty() || count == 0 {
        return out;
    }
    let mut seen = HashSet::new();
    for _ in 0..count * NEGATIVE_ATTEMPTS_PER_PAIR {
        if out.len() == count {
            break;
        }
        let pi = rng.random_range(0..paths.len());
        let path = &paths[pi];
        let step = rng.random_range(0..path.len());
        let rel = path.relations()[step];
        let (src_ty, dst_ty) = (path.types()[step], path.types()[step + 1]);
        let (ns, nd) = (g.node_types[src_ty].count, g.node_types[dst_ty].count);
        if ns == 0 || nd == 0 {
            continue;
        }
        let u = rng.random_range(0..ns);
        let v = rng.random_range(0..nd);
        if g.relations[rel].adjacency.contains(u, v) || !seen.insert((rel, u, v)) {
            continue;
        }
        out.push(PathPair {
            src: NodeRef { ty: src_ty, id: u },
            dst: NodeRef { ty: dst_ty, id: v },
            relation: rel,
            path: pi,
        });
    }
    if out.len() < count {
        log::warn!("negative sampling found {} of {} requested non-edges", out.len(), count);
    }
    out
}
