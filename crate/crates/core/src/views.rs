//! Construction of the attribute, local and global hypergraph views.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph, Hypergraph, ViewKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeViewConfig {
    pub k_nn: usize,
    pub k_clusters: usize,
    /// Clusters each node joins.
    pub s: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for AttributeViewConfig {
    fn default() -> Self {
        AttributeViewConfig {
            k_nn: 50,
            k_clusters: 50,
            s: 2,
            kmeans_iters: 100,
            seed: 0,
        }
    }
}

impl AttributeViewConfig {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        if self.k_nn == 0 || self.k_nn >= num_nodes {
            return Err(Error::Config(format!(
                "k_nn must satisfy 1 <= k_nn < num_nodes ({num_nodes}), got {}",
                self.k_nn
            )));
        }
        if self.s == 0 || self.s > self.k_clusters {
            return Err(Error::Config(format!(
                "s must satisfy 1 <= s <= k_clusters ({}), got {}",
                self.k_clusters, self.s
            )));
        }
        if self.k_clusters > num_nodes {
            return Err(Error::Config(format!(
                "k_clusters ({}) exceeds num_nodes ({num_nodes})",
                self.k_clusters
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalViewConfig {
    pub n_g: usize,
    pub detector: String,
    pub detector_params: BTreeMap<String, String>,
}

impl Default for GlobalViewConfig {
    fn default() -> Self {
        GlobalViewConfig {
            n_g: 3,
            detector: LabelPropagation::NAME.to_string(),
            detector_params: BTreeMap::new(),
        }
    }
}

/// Possibly overlapping node groups.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommunityCover {
    pub communities: Vec<Vec<usize>>,
}

/// Sparse copy of a feature row: ascending column indices and values.
struct SparseRow {
    idx: Vec<usize>,
    val: Vec<f64>,
}

fn sparse_rows(x: &FeatureMatrix) -> Vec<SparseRow> {
    (0..x.rows())
        .map(|i| {
            let (idx, val) = x
                .row(i)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(k, v)| (k, *v))
                .unzip();
            SparseRow { idx, val }
        })
        .collect()
}

/// Exact squared Euclidean distance; equal to the dense left-to-right sum since
/// skipped coordinates contribute exact zeros.
fn sq_dist(a: &SparseRow, b: &SparseRow) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut acc = 0.0;
    while i < a.idx.len() || j < b.idx.len() {
        let ka = a.idx.get(i).copied().unwrap_or(usize::MAX);
        let kb = b.idx.get(j).copied().unwrap_or(usize::MAX);
        let d = if ka == kb {
            let d = a.val[i] - b.val[j];
            i += 1;
            j += 1;
            d
        } else if ka < kb {
            let d = a.val[i];
            i += 1;
            d
        } else {
            let d = -b.val[j];
            j += 1;
            d
        };
        acc += d * d;
    }
    acc
}

/// `k` nearest neighbors of every node, by (distance, node id).
pub fn k_nearest_neighbors(x: &FeatureMatrix, k: usize) -> Vec<Vec<usize>> {
    let rows = sparse_rows(x);
    let n = rows.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(&rows[i], &rows[j]), j))
                .collect();
            let k = k.min(cand.len());
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k, cmp);
                cand.truncate(k);
            }
            cand.sort_by(cmp);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// Lloyd's k-means with k-means++ seeding. Returns row-major centers.
pub fn kmeans(x: &FeatureMatrix, k: usize, iters: usize, seed: u64) -> Vec<Vec<f64>> {
    let rows = sparse_rows(x);
    let n = rows.len();
    let d = x.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dense = |i: usize| x.row(i).to_vec();

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    centers.push(dense(first));
    let mut best = vec![f64::INFINITY; n];
    while centers.len() < k {
        let c = centers.last().unwrap();
        let cnorm: f64 = c.iter().map(|v| v * v).sum();
        let updated: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| center_dist(&rows[i], c, cnorm))
            .collect();
        for (b, u) in best.iter_mut().zip(updated) {
            *b = b.min(u);
        }
        let total: f64 = (0..n).filter(|&i| !chosen[i]).map(|i| best[i]).sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !chosen[i]) {
                r -= best[i];
                if r <= 0.0 && best[i] > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| !chosen[i] && best[i] > 0.0).unwrap())
        } else {
            let rest: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            *rest.choose(&mut rng).expect("k <= n")
        };
        chosen[pick] = true;
        centers.push(dense(pick));
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..iters {
        let norms: Vec<f64> = centers.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        let next: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| nearest_centers(&rows[i], &centers, &norms, 1)[0])
            .collect();
        let changed = next != assign;
        assign = next;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for (&kk, &v) in rows[i].idx.iter().zip(&rows[i].val) {
                sums[c][kk] += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    centers
}

fn center_dist(row: &SparseRow, c: &[f64], cnorm: f64) -> f64 {
    let mut acc = cnorm;
    for (&k, &v) in row.idx.iter().zip(&row.val) {
        acc += v * v - 2.0 * v * c[k];
    }
    acc.max(0.0)
}

fn nearest_centers(row: &SparseRow, centers: &[Vec<f64>], norms: &[f64], s: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = centers
        .iter()
        .zip(norms)
        .enumerate()
        .map(|(c, (ctr, &nrm))| (center_dist(row, ctr, nrm), c))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(s).map(|(_, c)| c).collect()
}

/// Attribute view: one k-NN hyperedge per node (the node plus its `k_nn`
/// nearest neighbors) followed by one hyperedge per non-empty k-means cluster,
/// where every node joins its `s` closest clusters.
pub fn build_attribute_view(x: &FeatureMatrix, cfg: &AttributeViewConfig) -> Result<Hypergraph> {
    let n = x.rows();
    cfg.validate(n)?;
    let mut edges: Vec<Vec<usize>> = k_nearest_neighbors(x, cfg.k_nn)
        .into_iter()
        .enumerate()
        .map(|(i, mut nn)| {
            nn.push(i);
            nn
        })
        .collect();

    let centers = kmeans(x, cfg.k_clusters, cfg.kmeans_iters, cfg.seed);
    let norms: Vec<f64> = centers.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let rows = sparse_rows(x);
    let choices: Vec<Vec<usize>> = rows
        .par_iter()
        .map(|r| nearest_centers(r, &centers, &norms, cfg.s))
        .collect();
    let mut clusters = vec![Vec::new(); cfg.k_clusters];
    for (i, cs) in choices.iter().enumerate() {
        for &c in cs {
            clusters[c].push(i);
        }
    }
    for (c, members) in clusters.into_iter().enumerate() {
        if members.is_empty() {
            log::info!("k-means cluster {c} is empty; dropping its hyperedge");
        } else {
            edges.push(members);
        }
    }
    Hypergraph::new(n, edges, ViewKind::Attribute)
}

/// Local view: the 1-hop ego network of every node.
pub fn build_local_view(g: &Graph) -> Hypergraph {
    let edges = (0..g.num_nodes())
        .map(|v| {
            let mut e = g.neighbors(v).to_vec();
            e.push(v);
            e
        })
        .collect();
    Hypergraph::new(g.num_nodes(), edges, ViewKind::Local).expect("ego networks are non-empty")
}

/// Pluggable overlapping community detection.
pub trait CommunityDetector: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, g: &Graph, seed: u64) -> CommunityCover;
}

/// Weighted overlapping label propagation. Each node keeps at most
/// `max_labels` community labels with belonging coefficients; a label survives
/// an update only if its coefficient is at least `1 / max_labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPropagation {
    pub max_labels: usize,
    pub max_sweeps: usize,
}

impl Default for LabelPropagation {
    fn default() -> Self {
        LabelPropagation {
            max_labels: 2,
            max_sweeps: 30,
        }
    }
}

impl LabelPropagation {
    pub const NAME: &'static str = "overlapping-lpa";

    pub fn from_params(params: &BTreeMap<String, String>) -> Result<Self> {
        let mut det = LabelPropagation::default();
        for (k, v) in params {
            let parsed: usize = v
                .parse()
                .map_err(|_| Error::Config(format!("detector param {k}={v:?} is not an integer")))?;
            match k.as_str() {
                "max_labels" | "v" => det.max_labels = parsed,
                "max_sweeps" | "sweeps" => det.max_sweeps = parsed,
                other => return Err(Error::Config(format!("unknown detector param {other:?}"))),
            }
        }
        if det.max_labels == 0 {
            return Err(Error::Config("max_labels must be >= 1".into()));
        }
        Ok(det)
    }
}

impl CommunityDetector for LabelPropagation {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn detect(&self, g: &Graph, seed: u64) -> CommunityCover {
        let n = g.num_nodes();
        if n == 0 {
            return CommunityCover::default();
        }
        let threshold = 1.0 / self.max_labels as f64 - 1e-12;
        let mut labels: Vec<Vec<(usize, f64)>> = (0..n).map(|v| vec![(v, 1.0)]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).filter(|&v| g.degree(v) > 0).collect();

        for sweep in 0..self.max_sweeps {
            order.shuffle(&mut rng);
            let mut changed = false;
            for &x in &order {
                let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
                let mut wsum = 0.0;
                for (&y, &w) in g.neighbors(x).iter().zip(g.neighbor_weights(x)) {
                    wsum += w;
                    for &(l, b) in &labels[y] {
                        *acc.entry(l).or_insert(0.0) += w * b;
                    }
                }
                if wsum <= 0.0 {
                    continue;
                }
                let scored: Vec<(usize, f64)> = acc.into_iter().map(|(l, b)| (l, b / wsum)).collect();
                let mut kept: Vec<(usize, f64)> =
                    scored.iter().copied().filter(|&(_, b)| b >= threshold).collect();
                if kept.is_empty() {
                    let best = scored
                        .iter()
                        .copied()
                        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                        .expect("non-isolated node has labelled neighbors");
                    kept = vec![(best.0, 1.0)];
                } else {
                    let total: f64 = kept.iter().map(|&(_, b)| b).sum();
                    for entry in &mut kept {
                        entry.1 /= total;
                    }
                }
                let same = kept.len() == labels[x].len()
                    && kept.iter().zip(&labels[x]).all(|(a, b)| a.0 == b.0);
                if !same {
                    changed = true;
                }
                labels[x] = kept;
            }
            if !changed {
                log::debug!("label propagation converged after {} sweep(s)", sweep + 1);
                break;
            }
        }

        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..n {
            if g.degree(v) == 0 {
                continue;
            }
            for &(l, _) in &labels[v] {
                groups.entry(l).or_default().push(v);
            }
        }
        let mut comms: Vec<Vec<usize>> = Vec::new();
        for members in groups.into_values() {
            comms.extend(connected_parts(g, &members));
        }
        CommunityCover {
            communities: prune_nested(comms),
        }
    }
}

/// Splits `members` into the connected components of their induced subgraph.
fn connected_parts(g: &Graph, members: &[usize]) -> Vec<Vec<usize>> {
    let inside: BTreeSet<usize> = members.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut parts = Vec::new();
    for &start in members {
        if !seen.insert(start) {
            continue;
        }
        let mut part = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &w in g.neighbors(u) {
                if inside.contains(&w) && seen.insert(w) {
                    part.push(w);
                    queue.push_back(w);
                }
            }
        }
        part.sort_unstable();
        parts.push(part);
    }
    parts
}

/// Drops duplicates and communities contained in another one, then orders the
/// cover canonically.
fn prune_nested(mut comms: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    comms.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    comms.dedup();
    let mut kept: Vec<Vec<usize>> = Vec::new();
    for c in comms {
        let nested = kept.iter().any(|k| is_subset(&c, k));
        if !nested {
            kept.push(c);
        }
    }
    kept.sort();
    kept
}

fn is_subset(small: &[usize], big: &[usize]) -> bool {
    let mut j = 0;
    for &x in small {
        while j < big.len() && big[j] < x {
            j += 1;
        }
        if j == big.len() || big[j] != x {
            return false;
        }
    }
    true
}

pub fn detector_from_config(name: &str, params: &BTreeMap<String, String>) -> Result<Box<dyn CommunityDetector>> {
    match name {
        LabelPropagation::NAME => Ok(Box::new(LabelPropagation::from_params(params)?)),
        other => Err(Error::Config(format!("unknown community detector {other:?}"))),
    }
}

/// Runs the default detector configured by `params` (key `detector` selects an
/// alternative implementation).
pub fn detect_communities(g: &Graph, params: &BTreeMap<String, String>, seed: u64) -> Result<CommunityCover> {
    let mut params = params.clone();
    let name = params
        .remove("detector")
        .unwrap_or_else(|| LabelPropagation::NAME.to_string());
    Ok(detector_from_config(&name, &params)?.detect(g, seed))
}

/// Wasserman–Faust closeness: `(r / (n-1)) * (r / sum of distances)` over the
/// `r` nodes reachable from `v`; zero for isolated nodes.
pub fn closeness_centrality(g: &Graph) -> Vec<f64> {
    let n = g.num_nodes();
    (0..n)
        .into_par_iter()
        .map(|v| {
            let mut dist = vec![usize::MAX; n];
            dist[v] = 0;
            let mut queue = VecDeque::from([v]);
            let (mut reach, mut total) = (0usize, 0usize);
            while let Some(u) = queue.pop_front() {
                for &w in g.neighbors(u) {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[u] + 1;
                        reach += 1;
                        total += dist[w];
                        queue.push_back(w);
                    }
                }
            }
            if reach == 0 || n < 2 {
                0.0
            } else {
                (reach as f64 / (n - 1) as f64) * (reach as f64 / total as f64)
            }
        })
        .collect()
}

/// The `count` nodes with highest closeness, ties by ascending id.
pub fn top_central_nodes(closeness: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..closeness.len()).collect();
    order.sort_by(|&a, &b| closeness[b].total_cmp(&closeness[a]).then(a.cmp(&b)));
    order.truncate(count);
    order
}

/// Global view: one hyperedge per community, with the `n_g` most central nodes
/// added to every hyperedge.
pub fn build_global_view(g: &Graph, cover: &CommunityCover, cfg: &GlobalViewConfig) -> Result<Hypergraph> {
    if cfg.n_g > g.num_nodes() {
        return Err(Error::Config(format!(
            "n_g ({}) exceeds num_nodes ({})",
            cfg.n_g,
            g.num_nodes()
        )));
    }
    let globals = top_central_nodes(&closeness_centrality(g), cfg.n_g);
    let edges = cover
        .communities
        .iter()
        .map(|c| {
            let mut e = c.clone();
            e.extend_from_slice(&globals);
            e
        })
        .collect();
    Hypergraph::new(g.num_nodes(), edges, ViewKind::Global)
}

/// Whether all hyperedges are mutually reachable through shared members.
pub fn hyperedges_connected(h: &Hypergraph) -> bool {
    let m = h.num_hyperedges();
    if m <= 1 {
        return true;
    }
    let mut seen = vec![false; m];
    seen[0] = true;
    let mut queue = VecDeque::from([0usize]);
    let mut count = 1;
    while let Some(j) = queue.pop_front() {
        for &v in h.hyperedge(j) {
            for &k in h.memberships(v) {
                if !seen[k] {
                    seen[k] = true;
                    count += 1;
                    queue.push_back(k);
                }
            }
        }
    }
    count == m
}

/// The three views of one dataset.
#[derive(Debug, Clone)]
pub struct ViewSet {
    pub attribute: Hypergraph,
    pub local: Hypergraph,
    pub global: Hypergraph,
}

impl ViewSet {
    pub fn get(&self, kind: ViewKind) -> &Hypergraph {
        match kind {
            ViewKind::Attribute => &self.attribute,
            ViewKind::Local => &self.local,
            ViewKind::Global => &self.global,
        }
    }
}

pub fn build_views(
    g: &Graph,
    x: &FeatureMatrix,
    attr: &AttributeViewConfig,
    global: &GlobalViewConfig,
    seed: u64,
) -> Result<ViewSet> {
    let attribute = build_attribute_view(x, attr)?;
    let local = build_local_view(g);
    let mut params = global.detector_params.clone();
    params.insert("detector".into(), global.detector.clone());
    let cover = detect_communities(g, &params, seed)?;
    let global = build_global_view(g, &cover, global)?;
    Ok(ViewSet {
        attribute,
        local,
        global,
    })
}
