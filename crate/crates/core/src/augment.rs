//! Learnable incidence dropping with a binary Gumbel-Softmax relaxation and a
//! straight-through estimator.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{keep_probabilities, IncidenceIndex};
use crate::error::{Error, Result};
use crate::graph::IncidenceMatrix;

pub const DEFAULT_KEEP_LOGIT: f64 = 2.0;
pub const DEFAULT_DROP_LOGIT: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub tau: f64,
    pub theta: f64,
    pub keep_init: f64,
    pub drop_init: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            tau: 0.2,
            theta: 0.8,
            keep_init: DEFAULT_KEEP_LOGIT,
            drop_init: DEFAULT_DROP_LOGIT,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!("theta must lie in (0,1), got {}", self.theta)));
        }
        if !self.keep_init.is_finite() || !self.drop_init.is_finite() {
            return Err(Error::Config("initial mask logits must be finite".into()));
        }
        Ok(())
    }
}

/// Keep/drop logits for every 1-entry of an incidence matrix, in the
/// matrix's hyperedge-major entry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskLogits {
    pub shape: (usize, usize),
    pub entries: Vec<(usize, usize)>,
    pub keep: Vec<f64>,
    pub drop: Vec<f64>,
    pub tau: f64,
    pub theta: f64,
}

impl MaskLogits {
    pub fn new(a: &IncidenceMatrix, cfg: &AugmentConfig) -> Result<Self> {
        cfg.validate()?;
        let n = a.nnz();
        Ok(MaskLogits {
            shape: a.shape(),
            entries: a.entries().to_vec(),
            keep: vec![cfg.keep_init; n],
            drop: vec![cfg.drop_init; n],
            tau: cfg.tau,
            theta: cfg.theta,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Result of masking: `values` equals `hard_mask` numerically. `guarded`
/// marks positions switched on by the emptiness guard.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedIncidence {
    pub shape: (usize, usize),
    pub entries: Vec<(usize, usize)>,
    pub values: Vec<f64>,
    pub hard_mask: Vec<bool>,
    pub p_keep: Vec<f64>,
    pub guarded: Vec<bool>,
}

impl AugmentedIncidence {
    pub fn get(&self, node: usize, hyperedge: usize) -> f64 {
        self.entries
            .iter()
            .position(|&e| e == (node, hyperedge))
            .map_or(0.0, |p| self.values[p])
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.shape.1]; self.shape.0];
        for (&(i, j), &v) in self.entries.iter().zip(&self.values) {
            m[i][j] = v;
        }
        m
    }

    /// Surviving hyperedges as node lists, suitable for the hypergraph text
    /// format.
    pub fn surviving_hyperedges(&self) -> Vec<Vec<usize>> {
        let mut edges = vec![Vec::new(); self.shape.1];
        for (&(i, j), &keep) in self.entries.iter().zip(&self.hard_mask) {
            if keep {
                edges[j].push(i);
            }
        }
        edges
    }
}

/// Standard Gumbel(0,1) samples `-ln(-ln u)`, `u ~ U(0,1)` open at both ends.
pub fn sample_gumbel(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_gumbel_with(count, &mut rng)
}

pub fn sample_gumbel_with<R: Rng>(count: usize, rng: &mut R) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            gumbel_from_uniform(u)
        })
        .collect()
}

pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// Thresholds `p` at `theta`, then forces the max-probability position of any
/// hyperedge left empty (ties to the earliest position).
pub fn threshold_with_guard(p: &[f64], theta: f64, inc: &IncidenceIndex) -> (Vec<bool>, Vec<bool>) {
    let mut hard: Vec<bool> = p.iter().map(|&v| v > theta).collect();
    let mut guarded = vec![false; p.len()];
    for j in 0..inc.num_edges {
        let range = inc.edge_positions(j);
        if range.is_empty() || range.clone().any(|q| hard[q]) {
            continue;
        }
        let mut best = range.start;
        for q in range {
            if p[q] > p[best] {
                best = q;
            }
        }
        hard[best] = true;
        guarded[best] = true;
    }
    (hard, guarded)
}

/// Index over the entries of `a`, positions matching `a.entries()`.
pub fn incidence_index(a: &IncidenceMatrix) -> IncidenceIndex {
    let (n, m) = a.shape();
    let mut edges = vec![Vec::new(); m];
    for &(i, j) in a.entries() {
        edges[j].push(i);
    }
    IncidenceIndex::new(n, &edges)
}

/// Noise for one augmentation draw: keep-side then drop-side samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskNoise {
    pub keep: Vec<f64>,
    pub drop: Vec<f64>,
}

impl MaskNoise {
    pub fn zeros(n: usize) -> Self {
        MaskNoise {
            keep: vec![0.0; n],
            drop: vec![0.0; n],
        }
    }

    pub fn sample<R: Rng>(n: usize, rng: &mut R) -> Self {
        let keep = sample_gumbel_with(n, rng);
        let drop = sample_gumbel_with(n, rng);
        MaskNoise { keep, drop }
    }
}

/// Samples a hard mask. Training draws fresh noise from `seed`; evaluation
/// uses no noise.
pub fn augment(a: &IncidenceMatrix, logits: &MaskLogits, seed: u64, training: bool) -> Result<AugmentedIncidence> {
    if a.shape() != logits.shape || a.entries() != logits.entries.as_slice() {
        return Err(Error::Contract(format!(
            "mask logits ({:?}, {} positions) do not match incidence ({:?}, {} positions)",
            logits.shape,
            logits.len(),
            a.shape(),
            a.nnz()
        )));
    }
    let n = logits.len();
    let noise = if training {
        MaskNoise::sample(n, &mut ChaCha8Rng::seed_from_u64(seed))
    } else {
        MaskNoise::zeros(n)
    };
    Ok(augment_with_noise(a, logits, &noise))
}

pub fn augment_with_noise(a: &IncidenceMatrix, logits: &MaskLogits, noise: &MaskNoise) -> AugmentedIncidence {
    let p = keep_probabilities(&logits.keep, &logits.drop, &noise.keep, &noise.drop, logits.tau);
    let inc = incidence_index(a);
    let (hard, guarded) = threshold_with_guard(&p, logits.theta, &inc);
    AugmentedIncidence {
        shape: a.shape(),
        entries: a.entries().to_vec(),
        values: hard.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect(),
        hard_mask: hard,
        p_keep: p,
        guarded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{incidence_of, Hypergraph, ViewKind};

    fn small() -> IncidenceMatrix {
        let h = Hypergraph::new(4, vec![vec![0, 1, 2], vec![2, 3], vec![1]], ViewKind::Local).unwrap();
        incidence_of(&h)
    }

    #[test]
    fn gumbel_at_half() {
        assert!((gumbel_from_uniform(0.5) - 0.366_512_920_581_664_3).abs() < 1e-12);
        assert!(gumbel_from_uniform(0.999_999) > gumbel_from_uniform(0.99));
    }

    #[test]
    fn gumbel_is_seeded() {
        assert_eq!(sample_gumbel(16, 5), sample_gumbel(16, 5));
        assert_ne!(sample_gumbel(16, 5), sample_gumbel(16, 6));
        assert!(sample_gumbel(1000, 1).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn saturated_keep_logit_keeps() {
        let a = small();
        let mut l = MaskLogits::new(&a, &AugmentConfig::default()).unwrap();
        l.keep.iter_mut().for_each(|k| *k = 10.0);
        for seed in 0..20 {
            let mut noise = MaskNoise::sample(l.len(), &mut ChaCha8Rng::seed_from_u64(seed));
            noise.keep.iter_mut().for_each(|e| *e = e.clamp(-3.0, 3.0));
            noise.drop.iter_mut().for_each(|e| *e = e.clamp(-3.0, 3.0));
            let aug = augment_with_noise(&a, &l, &noise);
            assert!(aug.hard_mask.iter().all(|&m| m));
        }
    }

    #[test]
    fn equal_logits_fall_back_to_guard() {
        let a = small();
        let mut l = MaskLogits::new(&a, &AugmentConfig::default()).unwrap();
        l.keep.iter_mut().for_each(|k| *k = 0.0);
        let aug = augment(&a, &l, 0, false).unwrap();
        assert!(aug.p_keep.iter().all(|&p| (p - 0.5).abs() < 1e-15));
        // one restored position per hyperedge: the first member
        assert_eq!(aug.surviving_hyperedges(), vec![vec![0], vec![2], vec![1]]);
        assert_eq!(aug.guarded.iter().filter(|&&g| g).count(), 3);
    }

    #[test]
    fn absent_positions_stay_zero() {
        let a = small();
        let l = MaskLogits::new(&a, &AugmentConfig::default()).unwrap();
        let aug = augment(&a, &l, 3, true).unwrap();
        let dense = aug.to_dense();
        let orig = a.to_dense();
        for i in 0..4 {
            for j in 0..3 {
                if orig[i][j] == 0.0 {
                    assert_eq!(dense[i][j], 0.0);
                }
                assert!(dense[i][j] == 0.0 || dense[i][j] == 1.0);
            }
        }
    }

    #[test]
    fn misaligned_logits_rejected() {
        let a = small();
        let other = incidence_of(&Hypergraph::new(4, vec![vec![0, 1]], ViewKind::Local).unwrap());
        let l = MaskLogits::new(&other, &AugmentConfig::default()).unwrap();
        assert!(matches!(augment(&a, &l, 0, true), Err(Error::Contract(_))));
    }

    #[test]
    fn config_ranges() {
        let bad = AugmentConfig {
            theta: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            tau: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
