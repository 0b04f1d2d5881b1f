//! Topology-aware contrastive objective: positive sets from graph and
//! hypergraph co-membership, distance- or similarity-ranked negatives, and a
//! multi-positive InfoNCE loss between view embeddings.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{PairIndex, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph, Hypergraph};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeStrategy {
    Distance,
    Similarity,
}

impl NegativeStrategy {
    pub fn tag(self) -> &'static str {
        match self {
            NegativeStrategy::Distance => "distance",
            NegativeStrategy::Similarity => "similarity",
        }
    }
}

impl fmt::Display for NegativeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for NegativeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distance" | "dis" => Ok(NegativeStrategy::Distance),
            "similarity" | "sim" => Ok(NegativeStrategy::Similarity),
            other => Err(Error::Config(format!(
                "unknown negative strategy '{other}' (expected distance or similarity)"
            ))),
        }
    }
}

/// Per-anchor positives (ascending) and ranked negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSets {
    pub pos: Vec<Vec<usize>>,
    pub neg: Vec<Vec<usize>>,
    pub strategy: Option<NegativeStrategy>,
    pub t: usize,
    pub eta: f64,
}

#[derive(Serialize, Deserialize)]
struct AnchorEntry {
    pos: Vec<usize>,
    neg: Vec<usize>,
}

impl SampleSets {
    pub fn build(
        g: &Graph,
        x: &FeatureMatrix,
        views: &[&Hypergraph],
        strategy: NegativeStrategy,
        t: usize,
        eta: f64,
    ) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {eta}")));
        }
        let pos = build_positive_sets(g, views);
        let neg = match strategy {
            NegativeStrategy::Distance => sample_negatives_distance(g, &pos, t),
            NegativeStrategy::Similarity => sample_negatives_similarity(x, &pos, t),
        };
        Ok(SampleSets {
            pos,
            neg,
            strategy: Some(strategy),
            t,
            eta,
        })
    }

    /// The topology-free variant: each node is its own only positive and every
    /// other node is a negative.
    pub fn self_only(n: usize, eta: f64) -> Self {
        SampleSets {
            pos: (0..n).map(|v| vec![v]).collect(),
            neg: (0..n).map(|v| (0..n).filter(|&u| u != v).collect()).collect(),
            strategy: None,
            t: n.saturating_sub(1),
            eta,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.pos.len()
    }

    pub fn pair_index(&self) -> PairIndex {
        let groups: Vec<(Vec<usize>, Vec<usize>)> = self
            .pos
            .iter()
            .zip(&self.neg)
            .map(|(p, n)| (p.clone(), n.clone()))
            .collect();
        PairIndex::new(self.num_nodes(), &groups)
    }

    /// `{anchor: {pos: [...], neg: [...]}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let map: BTreeMap<String, AnchorEntry> = self
            .pos
            .iter()
            .zip(&self.neg)
            .enumerate()
            .map(|(v, (p, n))| {
                (
                    v.to_string(),
                    AnchorEntry {
                        pos: p.clone(),
                        neg: n.clone(),
                    },
                )
            })
            .collect();
        serde_json::to_value(map).expect("sample sets serialize")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_json())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Self, graph neighbors, and every co-member of any hyperedge in any view.
pub fn build_positive_sets(g: &Graph, views: &[&Hypergraph]) -> Vec<Vec<usize>> {
    let n = g.num_nodes();
    (0..n)
        .into_par_iter()
        .map(|v| {
            let mut set = vec![v];
            set.extend_from_slice(g.neighbors(v));
            for h in views {
                for &j in h.memberships(v) {
                    set.extend_from_slice(h.hyperedge(j));
                }
            }
            set.sort_unstable();
            set.dedup();
            set
        })
        .collect()
}

fn bfs_from(g: &Graph, s: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.num_nodes()];
    dist[s] = 0;
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        for &w in g.neighbors(u) {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Farthest non-positive nodes first (unreachable before reachable), ties by id.
pub fn sample_negatives_distance(g: &Graph, pos: &[Vec<usize>], t: usize) -> Vec<Vec<usize>> {
    let lists: Vec<Vec<usize>> = (0..g.num_nodes())
        .into_par_iter()
        .map(|v| {
            let dist = bfs_from(g, v);
            let mut cand: Vec<usize> = (0..g.num_nodes())
                .filter(|&u| u != v && pos[v].binary_search(&u).is_err())
                .collect();
            cand.sort_by(|&a, &b| dist[b].cmp(&dist[a]).then(a.cmp(&b)));
            cand.truncate(t);
            cand
        })
        .collect();
    let short = lists.iter().filter(|l| l.len() < t).count();
    if short > 0 {
        log::debug!("{short} anchors have fewer than {t} distance negatives");
    }
    lists
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Least cosine-similar non-positive nodes first (raw features), ties by id.
pub fn sample_negatives_similarity(x: &FeatureMatrix, pos: &[Vec<usize>], t: usize) -> Vec<Vec<usize>> {
    let lists: Vec<Vec<usize>> = (0..x.rows())
        .into_par_iter()
        .map(|v| {
            let mut cand: Vec<(f64, usize)> = (0..x.rows())
                .filter(|&u| u != v && pos[v].binary_search(&u).is_err())
                .map(|u| (cosine(x.row(v), x.row(u)), u))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.truncate(t);
            cand.into_iter().map(|(_, u)| u).collect()
        })
        .collect();
    let short = lists.iter().filter(|l| l.len() < t).count();
    if short > 0 {
        log::debug!("{short} anchors have fewer than {t} similarity negatives");
    }
    lists
}

/// Contrastive loss between two embedding tables on the tape.
pub fn pairwise_loss_var(tape: &mut Tape, z_left: Var, z_right: Var, pairs: &Arc<PairIndex>, eta: f64) -> Var {
    let l = tape.row_normalize(z_left);
    let r = tape.row_normalize(z_right);
    let sims = tape.pair_dot(l, r, pairs.clone());
    tape.info_nce(sims, pairs.clone(), eta, pairs.num_left as f64)
}

/// Value of the contrastive loss between two embedding tables.
pub fn pairwise_loss(z_left: &Matrix, z_right: &Matrix, samples: &SampleSets) -> Result<f64> {
    if !z_left.is_finite() || !z_right.is_finite() {
        return Err(Error::Contract("non-finite embeddings in contrastive loss".into()));
    }
    let n = samples.num_nodes();
    if z_left.rows != n || z_right.rows != n {
        return Err(Error::Contract(format!(
            "embeddings have {} / {} rows, sample sets cover {n} nodes",
            z_left.rows, z_right.rows
        )));
    }
    let pairs = Arc::new(samples.pair_index());
    let mut tape = Tape::new();
    let l = tape.constant(z_left.clone());
    let r = tape.constant(z_right.clone());
    let loss = pairwise_loss_var(&mut tape, l, r, &pairs, samples.eta);
    Ok(tape.scalar(loss))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub attribute_local: f64,
    pub global_local: f64,
    pub attribute_global: f64,
    pub supervised: f64,
    pub total: f64,
}

impl fmt::Display for LossComponents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L_al={:.6} L_gl={:.6} L_ag={:.6} L_sup={:.6} total={:.6}",
            self.attribute_local, self.global_local, self.attribute_global, self.supervised, self.total
        )
    }
}

/// Tape handles of the total objective and its parts. Missing views leave
/// their pair terms out.
pub struct TotalLoss {
    pub total: Var,
    pub attribute_local: Option<Var>,
    pub global_local: Option<Var>,
    pub attribute_global: Option<Var>,
    pub supervised: Var,
}

impl TotalLoss {
    pub fn components(&self, tape: &Tape) -> LossComponents {
        let val = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
        LossComponents {
            attribute_local: val(self.attribute_local),
            global_local: val(self.global_local),
            attribute_global: val(self.attribute_global),
            supervised: tape.scalar(self.supervised),
            total: tape.scalar(self.total),
        }
    }
}

/// `L_al + L_gl + L_ag + mean cross-entropy over the training rows`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    z_a: Option<Var>,
    z_l: Option<Var>,
    z_g: Option<Var>,
    pairs: &Arc<PairIndex>,
    eta: f64,
    logits: Var,
    labels: &Arc<Vec<usize>>,
    train: &Arc<Vec<usize>>,
) -> TotalLoss {
    let pair = |tape: &mut Tape, a: Option<Var>, b: Option<Var>| match (a, b) {
        (Some(a), Some(b)) => Some(pairwise_loss_var(tape, a, b, pairs, eta)),
        _ => None,
    };
    let attribute_local = pair(tape, z_a, z_l);
    let global_local = pair(tape, z_g, z_l);
    let attribute_global = pair(tape, z_a, z_g);
    let supervised = tape.cross_entropy(logits, labels.clone(), train.clone());
    let mut total = supervised;
    for part in [attribute_local, global_local, attribute_global].into_iter().flatten() {
        total = tape.add(total, part);
    }
    TotalLoss {
        total,
        attribute_local,
        global_local,
        attribute_global,
        supervised,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{parse_edge_list, ViewKind};
    use crate::views::build_local_view;

    #[test]
    fn path_positive_sets() {
        let g = parse_edge_list("0 1\n1 2", 3, "t").unwrap();
        let local = build_local_view(&g);
        let pos = build_positive_sets(&g, &[&local]);
        assert_eq!(pos[0], vec![0, 1, 2]);
    }

    #[test]
    fn isolated_node_is_own_positive() {
        let g = Graph::from_edges(3, [(0, 1, 1.0)]).unwrap();
        let h = Hypergraph::new(3, vec![vec![0, 1], vec![2]], ViewKind::Local).unwrap();
        let pos = build_positive_sets(&g, &[&h]);
        assert_eq!(pos[2], vec![2]);
        assert!(pos.iter().enumerate().all(|(v, p)| p.contains(&v)));
    }

    #[test]
    fn distance_examples() {
        let g = parse_edge_list("0 1\n1 2\n2 3\n3 4", 5, "t").unwrap();
        let mut pos = vec![vec![]; 5];
        pos[0] = vec![0, 1, 2];
        assert_eq!(sample_negatives_distance(&g, &pos, 1)[0], vec![4]);

        let star = parse_edge_list("0 1\n0 2\n0 3\n0 4", 5, "t").unwrap();
        let pos = vec![vec![0, 1]; 5];
        assert_eq!(sample_negatives_distance(&star, &pos, 2)[0], vec![2, 3]);

        let two = parse_edge_list("0 1\n1 2\n3 4", 5, "t").unwrap();
        let pos: Vec<Vec<usize>> = (0..5).map(|v| vec![v]).collect();
        assert_eq!(sample_negatives_distance(&two, &pos, 5)[0], vec![3, 4, 2, 1]);
    }

    #[test]
    fn similarity_examples() {
        let x = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let pos: Vec<Vec<usize>> = (0..3).map(|v| vec![v]).collect();
        assert_eq!(sample_negatives_similarity(&x, &pos, 2)[0], vec![1, 2]);

        let x = FeatureMatrix::from_rows(&[vec![1.0, 1.0], vec![0.5, 0.4], vec![-1.0, -1.0], vec![0.0, 0.0]]).unwrap();
        let pos: Vec<Vec<usize>> = (0..4).map(|v| vec![v]).collect();
        assert_eq!(sample_negatives_similarity(&x, &pos, 3)[0], vec![2, 3, 1]);
    }

    #[test]
    fn uniform_similarity_loss() {
        let z = Matrix::filled(4, 3, 1.0);
        let s = SampleSets {
            pos: vec![vec![0, 1], vec![1], vec![2], vec![3]],
            neg: vec![vec![2, 3, 3], vec![0], vec![], vec![0, 1, 2]],
            strategy: None,
            t: 3,
            eta: 0.5,
        };
        let l = pairwise_loss(&z, &z, &s).unwrap();
        let expect = (-(2f64 / 5.0).ln() - (0.5f64).ln() - (0.25f64).ln()) / 4.0;
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_negatives_zero_loss() {
        let z = Matrix::from_vec(2, 2, vec![1.0, 0.2, -0.3, 0.8]);
        let s = SampleSets {
            pos: vec![vec![0], vec![1]],
            neg: vec![vec![], vec![]],
            strategy: None,
            t: 0,
            eta: 0.5,
        };
        assert_eq!(pairwise_loss(&z, &z, &s).unwrap(), 0.0);
    }

    #[test]
    fn nan_embeddings_rejected() {
        let z = Matrix::from_vec(1, 1, vec![f64::NAN]);
        let s = SampleSets::self_only(1, 0.5);
        assert!(matches!(pairwise_loss(&z, &z, &s), Err(Error::Contract(_))));
    }

    #[test]
    fn json_export_shape() {
        let s = SampleSets::self_only(2, 0.5);
        let v = s.to_json();
        assert_eq!(v["1"]["pos"], serde_json::json!([1]));
        assert_eq!(v["0"]["neg"], serde_json::json!([1]));
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("distance".parse::<NegativeStrategy>().unwrap(), NegativeStrategy::Distance);
        assert!("closest".parse::<NegativeStrategy>().is_err());
    }
}
