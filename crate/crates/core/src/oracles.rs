//! Deliberately naive reference implementations used to cross-check the
//! optimized code paths, plus the registered suite behind `verify`.
//!
//! Nothing here calls into the modules it checks except to obtain the value
//! under test.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph, Hypergraph, ViewKind};

pub const BFS_NODE_CAP: usize = 500;
pub const EXHAUSTIVE_NODE_CAP: usize = 50;

/// All-pairs shortest path lengths by Floyd–Warshall on a dense matrix;
/// `None` marks unreachable pairs.
pub fn bfs_all_pairs(g: &Graph) -> Result<Vec<Vec<Option<usize>>>> {
    let n = g.num_nodes();
    if n > BFS_NODE_CAP {
        return Err(Error::OracleRefused(format!(
            "all-pairs oracle is capped at {BFS_NODE_CAP} nodes, graph has {n}"
        )));
    }
    const INF: usize = usize::MAX / 4;
    let mut d = vec![vec![INF; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(u, v, _) in g.edges() {
        d[u][v] = 1;
        d[v][u] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    Ok(d
        .into_iter()
        .map(|row| row.into_iter().map(|x| (x < INF).then_some(x)).collect())
        .collect())
}

/// Closeness from the all-pairs matrix.
pub fn closeness_oracle(dist: &[Vec<Option<usize>>]) -> Vec<f64> {
    let n = dist.len();
    dist.iter()
        .enumerate()
        .map(|(v, row)| {
            let mut reach = 0.0;
            let mut total = 0.0;
            for (u, d) in row.iter().enumerate() {
                if u != v {
                    if let Some(d) = d {
                        reach += 1.0;
                        total += *d as f64;
                    }
                }
            }
            if reach == 0.0 {
                0.0
            } else {
                (reach / (n as f64 - 1.0)) * (reach / total)
            }
        })
        .collect()
}

fn dense_adjacency(g: &Graph) -> Vec<Vec<bool>> {
    let n = g.num_nodes();
    let mut a = vec![vec![false; n]; n];
    for &(u, v, _) in g.edges() {
        a[u][v] = true;
        a[v][u] = true;
    }
    a
}

/// Clustering coefficient of each member inside its hyperedge's induced
/// subgraph, by enumerating every member pair.
pub fn clustering_oracle(g: &Graph, h: &Hypergraph) -> Vec<Vec<f64>> {
    let a = dense_adjacency(g);
    h.hyperedges()
        .iter()
        .map(|e| {
            e.iter()
                .map(|&i| {
                    let nb: Vec<usize> = e.iter().copied().filter(|&u| a[i][u]).collect();
                    let k = nb.len();
                    if k < 2 {
                        return 0.0;
                    }
                    let mut links = 0;
                    for &u in &nb {
                        for &w in &nb {
                            if u < w && a[u][w] {
                                links += 1;
                            }
                        }
                    }
                    links as f64 / (k * (k - 1) / 2) as f64
                })
                .collect()
        })
        .collect()
}

pub fn density_oracle(h: &Hypergraph) -> Vec<f64> {
    h.hyperedges()
        .iter()
        .map(|e| {
            let mut count = 0;
            for v in 0..h.num_nodes() {
                if e.contains(&v) {
                    count += 1;
                }
            }
            count as f64 / h.num_nodes() as f64
        })
        .collect()
}

pub fn distinctiveness_oracle(h: &Hypergraph) -> Vec<f64> {
    let m = h.num_hyperedges() as f64;
    (0..h.num_nodes())
        .map(|v| {
            let inside = h.hyperedges().iter().filter(|e| e.contains(&v)).count() as f64;
            if m == 0.0 {
                1.0
            } else {
                1.0 - inside / m
            }
        })
        .collect()
}

fn cosine_naive(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] / na) * (b[k] / nb);
    }
    s
}

/// Repeatedly extracts the best remaining candidate under `better`.
fn select_by<F: Fn(usize, usize) -> bool>(mut cand: Vec<usize>, t: usize, better: F) -> Vec<usize> {
    let mut out = Vec::new();
    while out.len() < t && !cand.is_empty() {
        let mut best = 0;
        for k in 1..cand.len() {
            if better(cand[k], cand[best]) {
                best = k;
            }
        }
        out.push(cand.remove(best));
    }
    out
}

/// Lowest-cosine non-positive candidates per anchor, by selection.
pub fn cosine_ranking_oracle(x: &FeatureMatrix, pos: &[Vec<usize>], t: usize) -> Vec<Vec<usize>> {
    let n = x.rows();
    let sim: Vec<Vec<f64>> = (0..n)
        .map(|v| (0..n).map(|u| cosine_naive(x.row(v), x.row(u))).collect())
        .collect();
    (0..n)
        .map(|v| {
            let cand: Vec<usize> = (0..n).filter(|&u| u != v && !pos[v].contains(&u)).collect();
            select_by(cand, t, |a, b| sim[v][a] < sim[v][b] || (sim[v][a] == sim[v][b] && a < b))
        })
        .collect()
}

/// Farthest non-positive candidates per anchor from the all-pairs matrix.
pub fn distance_ranking_oracle(dist: &[Vec<Option<usize>>], pos: &[Vec<usize>], t: usize) -> Vec<Vec<usize>> {
    let n = dist.len();
    let key = |v: usize, u: usize| dist[v][u].unwrap_or(usize::MAX);
    (0..n)
        .map(|v| {
            let cand: Vec<usize> = (0..n).filter(|&u| u != v && !pos[v].contains(&u)).collect();
            select_by(cand, t, |a, b| key(v, a) > key(v, b) || (key(v, a) == key(v, b) && a < b))
        })
        .collect()
}

/// Neumaier-compensated sum.
fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Direct double loop over anchors and candidates of the contrastive loss,
/// with compensated sums and no max-subtraction.
pub fn exhaustive_loss(sim: &[Vec<f64>], pos: &[Vec<usize>], neg: &[Vec<usize>], eta: f64) -> Result<f64> {
    let n = sim.len();
    if n > EXHAUSTIVE_NODE_CAP {
        return Err(Error::OracleRefused(format!(
            "exhaustive loss is capped at {EXHAUSTIVE_NODE_CAP} nodes, got {n}"
        )));
    }
    let mut terms = Vec::with_capacity(n);
    for v in 0..n {
        let num = compensated_sum(pos[v].iter().map(|&u| (sim[v][u] / eta).exp()));
        let den = num + compensated_sum(neg[v].iter().map(|&u| (sim[v][u] / eta).exp()));
        if pos[v].is_empty() || den == num {
            terms.push(0.0);
        } else {
            terms.push(-(num / den).ln());
        }
    }
    Ok(compensated_sum(terms) / n as f64)
}

/// Cosine-similarity matrix between the rows of two tables.
pub fn cosine_matrix(left: &[Vec<f64>], right: &[Vec<f64>]) -> Vec<Vec<f64>> {
    left.iter()
        .map(|a| right.iter().map(|b| cosine_naive(a, b)).collect())
        .collect()
}

/// Central differences `(f(x+h) - f(x-h)) / 2h` per coordinate.
pub fn finite_difference_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Contract(format!(
                "non-finite loss while differencing coordinate {i}: f(x+h)={up}, f(x-h)={down}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Training accuracy (%) of a softmax regression fit by plain gradient
/// descent; used to confirm synthetic data is linearly separable.
pub fn logistic_fit_accuracy(x: &FeatureMatrix, labels: &[usize], epochs: usize, lr: f64) -> f64 {
    let n = x.rows();
    let d = x.dim();
    let c = labels.iter().max().map_or(1, |m| m + 1);
    let mut w = vec![vec![0.0; c]; d + 1];
    let scores = |w: &Vec<Vec<f64>>, i: usize| -> Vec<f64> {
        (0..c)
            .map(|k| w[d][k] + (0..d).map(|j| x.row(i)[j] * w[j][k]).sum::<f64>())
            .collect()
    };
    for _ in 0..epochs {
        let mut grad = vec![vec![0.0; c]; d + 1];
        for i in 0..n {
            let s = scores(&w, i);
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - mx).exp()).sum();
            for k in 0..c {
                let p = (s[k] - mx).exp() / z - if labels[i] == k { 1.0 } else { 0.0 };
                for j in 0..d {
                    grad[j][k] += p * x.row(i)[j] / n as f64;
                }
                grad[d][k] += p / n as f64;
            }
        }
        for j in 0..=d {
            for k in 0..c {
                w[j][k] -= lr * grad[j][k];
            }
        }
    }
    let correct = (0..n)
        .filter(|&i| {
            let s = scores(&w, i);
            let best = (0..c).fold(0, |b, k| if s[k] > s[b] { k } else { b });
            best == labels[i]
        })
        .count();
    100.0 * correct as f64 / n as f64
}

/// Seeded Erdős–Rényi graph.
pub fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v, 1.0));
            }
        }
    }
    Graph::from_edges(n, edges).expect("generated edges are valid")
}

/// Seeded random hypergraph with `m` non-empty hyperedges.
pub fn random_hypergraph(n: usize, m: usize, max_size: usize, seed: u64) -> Hypergraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = (0..m)
        .map(|_| {
            let size = rng.gen_range(1..=max_size.min(n).max(1));
            (0..size).map(|_| rng.gen_range(0..n)).collect()
        })
        .collect();
    Hypergraph::new(n, edges, ViewKind::Global).expect("generated hyperedges are valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub case_id: String,
    pub expected: f64,
    pub actual: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub millis: u128,
}

impl OracleReport {
    /// Compares two scalars; `tolerance` bounds the absolute error (zero
    /// demands exact equality).
    pub fn scalar(case_id: impl Into<String>, expected: f64, actual: f64, tolerance: f64) -> Self {
        let abs_error = (expected - actual).abs();
        let rel_error = relative_error(expected, actual, 1e-300);
        let pass = abs_error <= tolerance && actual.is_finite() == expected.is_finite();
        OracleReport {
            case_id: case_id.into(),
            expected,
            actual,
            abs_error,
            rel_error,
            tolerance,
            pass,
            millis: 0,
        }
    }

    /// Compares two vectors elementwise; records the worst entry.
    pub fn vector(case_id: impl Into<String>, expected: &[f64], actual: &[f64], tolerance: f64) -> Self {
        let case_id = case_id.into();
        if expected.len() != actual.len() {
            let mut r = OracleReport::scalar(case_id, expected.len() as f64, actual.len() as f64, 0.0);
            r.pass = false;
            return r;
        }
        let mut worst = OracleReport::scalar(case_id.clone(), 0.0, 0.0, tolerance);
        for (e, a) in expected.iter().zip(actual) {
            let r = OracleReport::scalar(case_id.clone(), *e, *a, tolerance);
            if !r.pass || r.abs_error > worst.abs_error {
                let failed = !r.pass;
                worst = r;
                if failed {
                    break;
                }
            }
        }
        worst
    }

    /// Exact comparison of index lists.
    pub fn lists(case_id: impl Into<String>, expected: &[Vec<usize>], actual: &[Vec<usize>]) -> Self {
        let mismatches = expected.iter().zip(actual).filter(|(e, a)| e != a).count()
            + expected.len().abs_diff(actual.len());
        let mut r = OracleReport::scalar(case_id, 0.0, mismatches as f64, 0.0);
        r.pass = mismatches == 0;
        r
    }

    pub const CSV_HEADER: [&'static str; 8] = [
        "case_id",
        "expected",
        "actual",
        "abs_error",
        "rel_error",
        "tolerance",
        "pass",
        "millis",
    ];

    pub fn csv_record(&self) -> [String; 8] {
        [
            self.case_id.clone(),
            format!("{:e}", self.expected),
            format!("{:e}", self.actual),
            format!("{:e}", self.abs_error),
            format!("{:e}", self.rel_error),
            format!("{:e}", self.tolerance),
            self.pass.to_string(),
            self.millis.to_string(),
        ]
    }
}

/// Times a case and stamps the report.
pub fn timed(f: impl FnOnce() -> OracleReport) -> OracleReport {
    let start = Instant::now();
    let mut r = f();
    r.millis = start.elapsed().as_millis();
    r
}
