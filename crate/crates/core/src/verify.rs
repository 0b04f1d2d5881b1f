//! Registered oracle cases: each compares a production routine against its
//! brute-force counterpart from [`crate::oracles`].

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{IncidenceIndex, Side, Tape};
use crate::data::{synthetic_sbm, Dataset, SbmConfig};
use crate::encoders::{clustering_bias, density_bias, distinctiveness, EncoderConfig};
use crate::error::Result;
use crate::graph::{split_nodes, FeatureMatrix, Graph, Hypergraph};
use crate::model::{FrozenState, Mode, Model, ModelInputs};
use crate::netcl::{build_positive_sets, pairwise_loss, sample_negatives_distance, sample_negatives_similarity, SampleSets};
use crate::oracles::*;
use crate::tensor::Matrix;
use crate::trainer::{prepare, Prepared, TrainConfig};
use crate::views::{closeness_centrality, k_nearest_neighbors, AttributeViewConfig, GlobalViewConfig};

pub type ClusteringFn = dyn Fn(&Graph, &Hypergraph) -> Vec<Vec<f64>> + Sync;

/// Floor of the relative-error denominator in gradient checks.
pub const GRAD_REL_FLOOR: f64 = 1e-3;
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

pub struct OracleCase {
    pub id: String,
    pub run: Box<dyn Fn() -> OracleReport + Send + Sync>,
}

fn case(id: impl Into<String>, run: impl Fn() -> OracleReport + Send + Sync + 'static) -> OracleCase {
    OracleCase {
        id: id.into(),
        run: Box::new(run),
    }
}

fn random_features(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureMatrix::new(n, d, vals).expect("finite")
}

/// Random graph and a hypergraph whose hyperedges are random node subsets.
pub fn random_instance(seed: u64) -> (Graph, Hypergraph) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(5..=100);
    let p = rng.gen_range(0.02..0.3);
    let m = rng.gen_range(1..=n);
    (random_graph(n, p, seed), random_hypergraph(n, m, 12, seed.wrapping_add(1)))
}

pub fn check_closeness(seed: u64) -> OracleReport {
    let (g, _) = random_instance(seed);
    let expected = closeness_oracle(&bfs_all_pairs(&g).expect("under cap"));
    OracleReport::vector(format!("closeness/{seed}"), &expected, &closeness_centrality(&g), 0.0)
}

pub fn check_bfs_negatives(seed: u64) -> OracleReport {
    let (g, h) = random_instance(seed);
    let pos = build_positive_sets(&g, &[&h]);
    let expected = distance_ranking_oracle(&bfs_all_pairs(&g).expect("under cap"), &pos, 25);
    OracleReport::lists(format!("distance-negatives/{seed}"), &expected, &sample_negatives_distance(&g, &pos, 25))
}

pub fn check_clustering_with(seed: u64, implementation: &ClusteringFn) -> OracleReport {
    let (g, h) = random_instance(seed);
    let expected: Vec<f64> = clustering_oracle(&g, &h).into_iter().flatten().collect();
    let actual: Vec<f64> = implementation(&g, &h).into_iter().flatten().collect();
    OracleReport::vector(format!("clustering/{seed}"), &expected, &actual, 0.0)
}

pub fn check_clustering(seed: u64) -> OracleReport {
    check_clustering_with(seed, &clustering_bias)
}

pub fn check_density(seed: u64) -> OracleReport {
    let (_, h) = random_instance(seed);
    OracleReport::vector(format!("density/{seed}"), &density_oracle(&h), &density_bias(&h), 0.0)
}

pub fn check_distinctiveness(seed: u64) -> OracleReport {
    let (_, h) = random_instance(seed);
    OracleReport::vector(
        format!("distinctiveness/{seed}"),
        &distinctiveness_oracle(&h),
        &distinctiveness(&h),
        0.0,
    )
}

pub fn check_cosine_ranking(seed: u64) -> OracleReport {
    let (g, h) = random_instance(seed);
    let x = random_features(g.num_nodes(), 5, seed);
    let pos = build_positive_sets(&g, &[&h]);
    OracleReport::lists(
        format!("cosine-negatives/{seed}"),
        &cosine_ranking_oracle(&x, &pos, 25),
        &sample_negatives_similarity(&x, &pos, 25),
    )
}

pub fn check_knn(seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(5..=100);
    let x = random_features(n, 4, seed);
    let k = rng.gen_range(1..n);
    let expected: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let d: Vec<f64> = (0..n)
                .map(|j| (0..4).map(|c| (x.row(i)[c] - x.row(j)[c]).powi(2)).sum())
                .collect();
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
            order.truncate(k);
            order
        })
        .collect();
    OracleReport::lists(format!("knn/{seed}"), &expected, &k_nearest_neighbors(&x, k))
}

/// Contrastive loss against the double-loop oracle on random embeddings.
pub fn check_loss(seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=EXHAUSTIVE_NODE_CAP);
    let d = 6;
    let left: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let right: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for v in 0..n {
        let mut p = vec![v];
        let mut q = Vec::new();
        for u in 0..n {
            if u != v {
                match rng.gen_range(0..3) {
                    0 => p.push(u),
                    1 => q.push(u),
                    _ => {}
                }
            }
        }
        p.sort_unstable();
        pos.push(p);
        neg.push(q);
    }
    let eta = 0.5;
    let expected = exhaustive_loss(&cosine_matrix(&left, &right), &pos, &neg, eta).expect("under cap");
    let flat = |rows: &[Vec<f64>]| Matrix::from_vec(n, d, rows.concat());
    let samples = SampleSets {
        pos,
        neg,
        strategy: None,
        t: n,
        eta,
    };
    let actual = pairwise_loss(&flat(&left), &flat(&right), &samples).unwrap_or(f64::NAN);
    OracleReport::scalar(format!("pairwise-loss/{seed}"), expected, actual, 1e-10)
}

/// Attention weights sum to one per hyperedge and per node.
pub fn check_attention_sums(seed: u64) -> OracleReport {
    let (_, h) = random_instance(seed);
    let inc = Arc::new(IncidenceIndex::new(h.num_nodes(), h.hyperedges()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores: Vec<f64> = (0..inc.nnz()).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let mut tape = Tape::new();
    let s = tape.constant(Matrix::column(scores));
    let gamma = tape.segment_softmax(s, None, Side::Edge, inc.clone());
    let lambda = tape.segment_softmax(s, None, Side::Node, inc.clone());
    let mut worst: f64 = 0.0;
    for j in 0..inc.num_edges {
        let sum: f64 = inc.edge_positions(j).map(|p| tape.value(gamma).data[p]).sum();
        worst = worst.max((sum - 1.0).abs());
    }
    for i in 0..inc.num_nodes {
        let pos = inc.node_positions(i);
        if !pos.is_empty() {
            let sum: f64 = pos.iter().map(|&p| tape.value(lambda).data[p]).sum();
            worst = worst.max((sum - 1.0).abs());
        }
    }
    OracleReport::scalar(format!("attention-sums/{seed}"), 0.0, worst, 1e-9)
}

/// Small three-view instance used for gradient checks.
pub fn gradient_instance() -> Result<(Dataset, Prepared, TrainConfig)> {
    let data = synthetic_sbm(&SbmConfig {
        blocks: 2,
        block_size: 10,
        p_in: 0.5,
        p_out: 0.05,
        feature_dim: 6,
        signal: 1.0,
        noise: 0.5,
        seed: 11,
    })?;
    let cfg = TrainConfig {
        encoder: EncoderConfig {
            d_model: 4,
            d_hid: 4,
            ..Default::default()
        },
        attribute_view: AttributeViewConfig {
            k_nn: 3,
            k_clusters: 3,
            ..Default::default()
        },
        global_view: GlobalViewConfig {
            n_g: 2,
            ..Default::default()
        },
        t: 5,
        ..Default::default()
    };
    let prepared = prepare(&data, &cfg)?;
    Ok((data, prepared, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorGradCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
}

/// Compares backpropagated gradients against central differences for every
/// entry of every tensor, with the mask state frozen and dropout off.
pub fn model_gradient_check(model: &Model, inputs: &ModelInputs, frozen: &FrozenState) -> Result<Vec<TensorGradCheck>> {
    let mut fwd = model.forward(inputs, Mode::Frozen(frozen));
    let analytic = fwd.gradients(&model.store);
    let mut probe = model.clone();
    let mut out = Vec::new();
    for id in model.store.ids() {
        let base = model.store.get(id).data.clone();
        let numeric = finite_difference_grad(
            |x| {
                probe.store.get_mut(id).data.copy_from_slice(x);
                let f = probe.forward(inputs, Mode::Frozen(frozen));
                f.tape.scalar(f.loss.as_ref().expect("loss").total)
            },
            &base,
            FD_STEP,
        )?;
        probe.store.get_mut(id).data.copy_from_slice(&base);
        let a = &analytic[id.0].data;
        let max_rel_error = a
            .iter()
            .zip(&numeric)
            .map(|(&x, &y)| relative_error(x, y, GRAD_REL_FLOOR))
            .fold(0.0, f64::max);
        out.push(TensorGradCheck {
            name: model.store.name(id).to_string(),
            entries: a.len(),
            max_rel_error,
            max_abs_grad: a.iter().map(|v| v.abs()).fold(0.0, f64::max),
        });
    }
    Ok(out)
}

/// A single-hyperedge attention model: every parameter checked by differences.
pub fn check_single_hyperedge_gradient() -> OracleReport {
    let run = || -> Result<f64> {
        let data = synthetic_sbm(&SbmConfig {
            blocks: 2,
            block_size: 3,
            p_in: 1.0,
            p_out: 1.0,
            feature_dim: 4,
            signal: 1.0,
            noise: 0.3,
            seed: 5,
        })?;
        let cfg = TrainConfig {
            encoder: EncoderConfig {
                d_model: 3,
                d_hid: 3,
                bins: 4,
                ..Default::default()
            },
            attribute_view: AttributeViewConfig {
                k_nn: 5,
                k_clusters: 1,
                s: 1,
                ..Default::default()
            },
            t: 2,
            ..Default::default()
        };
        let mut cfg = cfg;
        cfg.views.local = false;
        cfg.views.global = false;
        let prepared = prepare(&data, &cfg)?;
        let split = split_nodes(&data.labels, (0.5, 0.0, 0.5), 0)?;
        let spec = cfg.model_spec();
        let inputs = ModelInputs::new(&data.graph, &data.features, &prepared.views, &prepared.samples, &split, &spec);
        let model = Model::new(spec, &inputs, data.features.dim(), 3);
        let frozen = model.freeze(&inputs, 4);
        let checks = model_gradient_check(&model, &inputs, &frozen)?;
        Ok(checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max))
    };
    let worst = run().unwrap_or(f64::NAN);
    let mut r = OracleReport::scalar("gradient/single-hyperedge", 0.0, worst, GRAD_REL_TOL);
    r.rel_error = worst;
    r
}

/// Every registered case in a fixed order.
pub fn registered_cases() -> Vec<OracleCase> {
    let mut cases = vec![case("bfs/path", || {
        let g = Graph::from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)]).expect("valid");
        let d = bfs_all_pairs(&g).expect("under cap")[0][2].map_or(f64::INFINITY, |d| d as f64);
        OracleReport::scalar("bfs/path", 2.0, d, 0.0)
    })];
    for seed in 0..5u64 {
        cases.push(case(format!("closeness/{seed}"), move || check_closeness(seed)));
        cases.push(case(format!("distance-negatives/{seed}"), move || check_bfs_negatives(seed)));
        cases.push(case(format!("clustering/{seed}"), move || check_clustering(seed)));
        cases.push(case(format!("density/{seed}"), move || check_density(seed)));
        cases.push(case(format!("distinctiveness/{seed}"), move || check_distinctiveness(seed)));
        cases.push(case(format!("cosine-negatives/{seed}"), move || check_cosine_ranking(seed)));
        cases.push(case(format!("knn/{seed}"), move || check_knn(seed)));
        cases.push(case(format!("pairwise-loss/{seed}"), move || check_loss(seed)));
        cases.push(case(format!("attention-sums/{seed}"), move || check_attention_sums(seed)));
    }
    cases.push(case("gradient/single-hyperedge", check_single_hyperedge_gradient));
    cases
}

/// Runs every registered case.
pub fn run_suite() -> Vec<OracleReport> {
    use rayon::prelude::*;
    registered_cases()
        .par_iter()
        .map(|c| {
            let mut r = timed(|| (c.run)());
            r.case_id = c.id.clone();
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn off_by_one_clustering_is_caught() {
        let mutated = |g: &Graph, h: &Hypergraph| {
            h.hyperedges()
                .iter()
                .map(|e| {
                    e.iter()
                        .map(|&i| {
                            let inside: Vec<usize> = g.neighbors(i).iter().copied().filter(|u| e.contains(u)).collect();
                            let k = inside.len();
                            if k <= 1 {
                                return 0.0;
                            }
                            let mut links = 0usize;
                            for a in 0..k {
                                for b in a + 1..k {
                                    if g.has_edge(inside[a], inside[b]) {
                                        links += 1;
                                    }
                                }
                            }
                            2.0 * links as f64 / (k * (k + 1)) as f64
                        })
                        .collect()
                })
                .collect()
        };
        let caught = (0..5).any(|s| !check_clustering_with(s, &mutated).pass);
        assert!(caught);
        assert!((0..5).all(|s| check_clustering(s).pass));
    }

    #[test]
    fn suite_row_count_matches_registry() {
        let ids: Vec<String> = registered_cases().into_iter().map(|c| c.id).collect();
        let mut unique = ids.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), ids.len());
    }
}
