//! Graphs, hypergraphs, node features, labels and splits.
//!
//! Every type here is immutable once built. Node ids are dense `0..num_nodes`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simple undirected weighted graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<Vec<usize>>,
    weights: Vec<Vec<f64>>,
}

impl Graph {
    /// Builds a graph from raw edges. Duplicate undirected edges keep the first
    /// weight seen; self-loops are dropped.
    pub fn from_edges<I>(num_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut seen: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut self_loops = 0usize;
        for (u, v, w) in edges {
            for node in [u, v] {
                if node >= num_nodes {
                    return Err(Error::NodeRange {
                        node,
                        num_nodes,
                        line: 0,
                    });
                }
            }
            if u == v {
                self_loops += 1;
                continue;
            }
            seen.entry((u.min(v), u.max(v))).or_insert(w);
        }
        if self_loops > 0 {
            log::warn!("dropped {self_loops} self-loop(s)");
        }
        Ok(Self::from_canonical(num_nodes, seen))
    }

    fn from_canonical(num_nodes: usize, seen: BTreeMap<(usize, usize), f64>) -> Self {
        let mut nbrs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_nodes];
        let mut edges = Vec::with_capacity(seen.len());
        for ((u, v), w) in seen {
            nbrs[u].push((v, w));
            nbrs[v].push((u, w));
            edges.push((u, v, w));
        }
        let mut adjacency = Vec::with_capacity(num_nodes);
        let mut weights = Vec::with_capacity(num_nodes);
        for mut list in nbrs {
            list.sort_by_key(|&(v, _)| v);
            adjacency.push(list.iter().map(|&(v, _)| v).collect());
            weights.push(list.iter().map(|&(_, w)| w).collect());
        }
        Graph {
            num_nodes,
            edges,
            adjacency,
            weights,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical `(u, v, w)` edges with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Sorted neighbor list of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    /// Edge weights aligned with [`Graph::neighbors`].
    pub fn neighbor_weights(&self, v: usize) -> &[f64] {
        &self.weights[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Relabels nodes: node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        Graph::from_edges(
            self.num_nodes,
            self.edges.iter().map(|&(u, v, w)| (perm[u], perm[v], w)),
        )
        .expect("permutation keeps ids in range")
    }
}

/// Parses an edge list (`u v` or `u v w` per line, `#` comments).
pub fn load_graph(path: impl AsRef<Path>, num_nodes: usize) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, num_nodes, &path.display().to_string())
}

pub fn parse_edge_list(text: &str, num_nodes: usize, context: &str) -> Result<Graph> {
    let mut seen: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(Error::Parse {
                context: context.to_string(),
                line: line_no,
                message: format!("expected `u v` or `u v w`, found {} fields", fields.len()),
            });
        }
        let parse_id = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::Parse {
                context: context.to_string(),
                line: line_no,
                message: format!("bad node id {s:?}: {e}"),
            })
        };
        let u = parse_id(fields[0])?;
        let v = parse_id(fields[1])?;
        let w = match fields.get(2) {
            Some(s) => s.parse::<f64>().map_err(|e| Error::Parse {
                context: context.to_string(),
                line: line_no,
                message: format!("bad weight {s:?}: {e}"),
            })?,
            None => 1.0,
        };
        for node in [u, v] {
            if node >= num_nodes {
                return Err(Error::NodeRange {
                    node,
                    num_nodes,
                    line: line_no,
                });
            }
        }
        if u == v {
            log::warn!("{context}:{line_no}: dropping self-loop on node {u}");
            continue;
        }
        seen.entry((u.min(v), u.max(v))).or_insert(w);
    }
    Ok(Graph::from_canonical(num_nodes, seen))
}

/// Mapping from external string ids to dense internal ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    external: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the internal id, assigning the next free one on first sight.
    pub fn intern(&mut self, external: &str) -> usize {
        if let Some(&id) = self.index.get(external) {
            return id;
        }
        let id = self.external.len();
        self.external.push(external.to_string());
        self.index.insert(external.to_string(), id);
        id
    }

    pub fn get(&self, external: &str) -> Option<usize> {
        self.index.get(external).copied()
    }

    pub fn external(&self, internal: usize) -> &str {
        &self.external[internal]
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    /// Two-column CSV sidecar: `external_id,internal_id`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["external_id", "internal_id"])?;
        for (i, ext) in self.external.iter().enumerate() {
            w.write_record([ext.as_str(), &i.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path.as_ref())?;
        let mut pairs = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let id: usize = rec
                .get(1)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse {
                    context: path.as_ref().display().to_string(),
                    line: i + 2,
                    message: "bad internal id".into(),
                })?;
            pairs.push((id, rec.get(0).unwrap_or("").to_string()));
        }
        pairs.sort();
        let mut map = IdMap::new();
        for (expected, (id, ext)) in pairs.into_iter().enumerate() {
            if id != expected {
                return Err(Error::Parse {
                    context: path.as_ref().display().to_string(),
                    line: 0,
                    message: format!("internal ids are not dense (missing {expected})"),
                });
            }
            map.intern(&ext);
        }
        Ok(map)
    }
}

/// Loads an edge list whose ids are arbitrary strings, interning them densely.
/// Ids already present in `ids` keep their mapping.
pub fn load_graph_with_ids(path: impl AsRef<Path>, ids: &mut IdMap) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut raw = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(Error::Parse {
                context: path.display().to_string(),
                line: idx + 1,
                message: format!("expected 2 or 3 fields, found {}", fields.len()),
            });
        }
        let w = match fields.get(2) {
            Some(s) => s.parse::<f64>().map_err(|e| Error::Parse {
                context: path.display().to_string(),
                line: idx + 1,
                message: format!("bad weight: {e}"),
            })?,
            None => 1.0,
        };
        raw.push((ids.intern(fields[0]), ids.intern(fields[1]), w));
    }
    Graph::from_edges(ids.len(), raw)
}

/// Dense node attribute matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::Contract(format!(
                "feature buffer has {} values, expected {rows}x{dim}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite feature at row {}, column {}",
                pos / dim.max(1),
                pos % dim.max(1)
            )));
        }
        Ok(FeatureMatrix { rows, dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Contract("ragged feature rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    /// One-hot identity features.
    pub fn identity(n: usize) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        FeatureMatrix {
            rows: n,
            dim: n,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn permuted(&self, perm: &[usize]) -> FeatureMatrix {
        let mut values = vec![0.0; self.values.len()];
        for i in 0..self.rows {
            let to = perm[i];
            values[to * self.dim..(to + 1) * self.dim].copy_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: self.rows,
            dim: self.dim,
            values,
        }
    }
}

fn looks_like_header(record: &csv::StringRecord) -> bool {
    record.iter().any(|f| f.trim().parse::<f64>().is_err())
}

/// Reads a feature CSV; row index is the node id. A non-numeric first row is
/// treated as a header.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if i == 0 && looks_like_header(&rec) {
            continue;
        }
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                context: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        rows.push(row);
    }
    FeatureMatrix::from_rows(&rows)
}

/// Reads a label CSV: either one column `label` or two columns `node,label`.
/// Labels may be arbitrary strings; class ids follow sorted label order
/// (numerically when every label is an integer).
pub fn load_labels(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<String>)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut raw: Vec<(Option<usize>, String)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if i == 0 {
            let first = rec.get(0).unwrap_or("").to_ascii_lowercase();
            if ["node", "id", "label", "class", "node_id"].contains(&first.as_str()) {
                continue;
            }
        }
        match rec.len() {
            1 => raw.push((None, rec[0].to_string())),
            2 => {
                let node = rec[0].parse::<usize>().map_err(|e| Error::Parse {
                    context: path.display().to_string(),
                    line: i + 1,
                    message: format!("bad node id: {e}"),
                })?;
                raw.push((Some(node), rec[1].to_string()));
            }
            n => {
                return Err(Error::Parse {
                    context: path.display().to_string(),
                    line: i + 1,
                    message: format!("expected 1 or 2 columns, found {n}"),
                })
            }
        }
    }
    let mut names: Vec<String> = raw.iter().map(|(_, l)| l.clone()).collect();
    names.sort();
    names.dedup();
    if names.iter().all(|n| n.parse::<i64>().is_ok()) {
        names.sort_by_key(|n| n.parse::<i64>().unwrap());
    }
    let class_of: HashMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut labels = vec![usize::MAX; raw.len()];
    for (row, (node, label)) in raw.iter().enumerate() {
        let node = node.unwrap_or(row);
        if node >= labels.len() {
            return Err(Error::NodeRange {
                node,
                num_nodes: labels.len(),
                line: row + 1,
            });
        }
        labels[node] = class_of[label.as_str()];
    }
    if labels.contains(&usize::MAX) {
        return Err(Error::Contract("label file leaves some node unlabeled".into()));
    }
    Ok((labels, names))
}

/// Which modality/granularity a hypergraph view captures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Attribute,
    Local,
    Global,
}

impl ViewKind {
    pub const ALL: [ViewKind; 3] = [ViewKind::Attribute, ViewKind::Local, ViewKind::Global];

    pub fn tag(self) -> &'static str {
        match self {
            ViewKind::Attribute => "attribute",
            ViewKind::Local => "local",
            ViewKind::Global => "global",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "attribute" => Some(ViewKind::Attribute),
            "local" => Some(ViewKind::Local),
            "global" => Some(ViewKind::Global),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Hypergraph stored as hyperedge → sorted member list, plus its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph {
    num_nodes: usize,
    hyperedges: Vec<Vec<usize>>,
    memberships: Vec<Vec<usize>>,
    view: ViewKind,
}

impl Hypergraph {
    /// Members are sorted and deduplicated. Empty hyperedges are rejected.
    pub fn new(num_nodes: usize, hyperedges: Vec<Vec<usize>>, view: ViewKind) -> Result<Self> {
        let mut edges = Vec::with_capacity(hyperedges.len());
        for (j, mut e) in hyperedges.into_iter().enumerate() {
            e.sort_unstable();
            e.dedup();
            if e.is_empty() {
                return Err(Error::Contract(format!("hyperedge {j} is empty")));
            }
            if let Some(&bad) = e.iter().find(|&&v| v >= num_nodes) {
                return Err(Error::NodeRange {
                    node: bad,
                    num_nodes,
                    line: j,
                });
            }
            edges.push(e);
        }
        let mut memberships = vec![Vec::new(); num_nodes];
        for (j, e) in edges.iter().enumerate() {
            for &v in e {
                memberships[v].push(j);
            }
        }
        Ok(Hypergraph {
            num_nodes,
            hyperedges: edges,
            memberships,
            view,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_hyperedges(&self) -> usize {
        self.hyperedges.len()
    }

    pub fn hyperedges(&self) -> &[Vec<usize>] {
        &self.hyperedges
    }

    pub fn hyperedge(&self, j: usize) -> &[usize] {
        &self.hyperedges[j]
    }

    /// Hyperedge ids containing `v`, ascending.
    pub fn memberships(&self, v: usize) -> &[usize] {
        &self.memberships[v]
    }

    pub fn view(&self) -> ViewKind {
        self.view
    }

    pub fn num_incidences(&self) -> usize {
        self.hyperedges.iter().map(Vec::len).sum()
    }

    pub fn permuted(&self, perm: &[usize]) -> Hypergraph {
        let edges = self
            .hyperedges
            .iter()
            .map(|e| e.iter().map(|&v| perm[v]).collect())
            .collect();
        Hypergraph::new(self.num_nodes, edges, self.view).expect("permutation keeps ids valid")
    }

    /// Text form: `#view=<tag>` header then one hyperedge per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("#view={}\n", self.view.tag());
        for e in &self.hyperedges {
            let line: Vec<String> = e.iter().map(usize::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, num_nodes: usize) -> Result<Self> {
        let mut view = None;
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(tag) = line.strip_prefix("#view=") {
                view = Some(ViewKind::from_tag(tag.trim()).ok_or_else(|| Error::Parse {
                    context: "hypergraph".into(),
                    line: i + 1,
                    message: format!("unknown view tag {tag:?}"),
                })?);
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let e = line
                .split_whitespace()
                .map(str::parse::<usize>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    context: "hypergraph".into(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            edges.push(e);
        }
        let view = view.ok_or_else(|| Error::Parse {
            context: "hypergraph".into(),
            line: 1,
            message: "missing #view= header".into(),
        })?;
        Hypergraph::new(num_nodes, edges, view)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Sparse binary node × hyperedge incidence. Entries are kept hyperedge-major,
/// members ascending within each hyperedge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    num_nodes: usize,
    num_hyperedges: usize,
    entries: Vec<(usize, usize)>,
}

impl IncidenceMatrix {
    pub fn shape(&self) -> (usize, usize) {
        (self.num_nodes, self.num_hyperedges)
    }

    /// `(node, hyperedge)` pairs of every 1-entry.
    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, node: usize, hyperedge: usize) -> f64 {
        if self.entries.binary_search_by_key(&(hyperedge, node), |&(i, j)| (j, i)).is_ok() {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.num_hyperedges]; self.num_nodes];
        for &(i, j) in &self.entries {
            m[i][j] = 1.0;
        }
        m
    }

    /// Rebuilds node memberships (the transpose view).
    pub fn memberships(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.num_nodes];
        for &(i, j) in &self.entries {
            m[i].push(j);
        }
        m
    }
}

pub fn incidence_of(h: &Hypergraph) -> IncidenceMatrix {
    let entries = h
        .hyperedges()
        .iter()
        .enumerate()
        .flat_map(|(j, e)| e.iter().map(move |&i| (i, j)))
        .collect();
    IncidenceMatrix {
        num_nodes: h.num_nodes(),
        num_hyperedges: h.num_hyperedges(),
        entries,
    }
}

/// Node labels plus a disjoint train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSplit {
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub num_classes: usize,
}

/// Seeded split. Classes with at least 10 members are stratified; smaller
/// classes are pooled and shuffled together. Quotas use the largest-remainder
/// rule so the totals always equal `round(ratio * n)`.
pub fn split_nodes(labels: &[usize], ratios: (f64, f64, f64), seed: u64) -> Result<LabeledSplit> {
    let (r_train, r_val, r_test) = ratios;
    if [r_train, r_val, r_test].iter().any(|r| !(0.0..=1.0).contains(r))
        || (r_train + r_val + r_test - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split ratios must be in [0,1] and sum to 1, got {ratios:?}"
        )));
    }
    let n = labels.len();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (v, &c) in labels.iter().enumerate() {
        by_class[c].push(v);
    }
    let mut strata: Vec<Vec<usize>> = Vec::new();
    let mut pooled = Vec::new();
    for (c, members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            log::warn!(
                "class {c} has only {} member(s); falling back to a plain shuffle for it",
                members.len()
            );
        }
        if members.len() >= 10 {
            strata.push(members);
        } else {
            pooled.extend(members);
        }
    }
    if !pooled.is_empty() {
        strata.push(pooled);
    }
    for s in &mut strata {
        s.shuffle(&mut rng);
    }

    let n_train = (r_train * n as f64).round() as usize;
    let n_val = ((r_val * n as f64).round() as usize).min(n - n_train);
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let train_q = apportion(&sizes, n_train);
    let remaining: Vec<usize> = sizes.iter().zip(&train_q).map(|(s, t)| s - t).collect();
    let val_q = apportion(&remaining, n_val);

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for ((s, &t), &v) in strata.iter().zip(&train_q).zip(&val_q) {
        train.extend_from_slice(&s[..t]);
        val.extend_from_slice(&s[t..t + v]);
        test.extend_from_slice(&s[t + v..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(LabeledSplit {
        labels: labels.to_vec(),
        train,
        val,
        test,
        num_classes,
    })
}

/// Distributes `total` over strata proportionally to `sizes` (largest remainder,
/// ties to the earlier stratum), never exceeding a stratum's size.
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    if sum == 0 {
        return vec![0; sizes.len()];
    }
    let total = total.min(sum);
    let exact: Vec<f64> = sizes
        .iter()
        .map(|&s| s as f64 * total as f64 / sum as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = total - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    while left > 0 {
        let before = left;
        for &i in &order {
            if left == 0 {
                break;
            }
            if quota[i] < sizes[i] {
                quota[i] += 1;
                left -= 1;
            }
        }
        if left == before {
            break;
        }
    }
    quota
}
