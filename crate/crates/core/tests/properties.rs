use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use hypergcl::augment::{augment, AugmentConfig, MaskLogits};
use hypergcl::autodiff::{IncidenceIndex, Side, Tape};
use hypergcl::config::RunConfigFile;
use hypergcl::graph::{incidence_of, split_nodes, FeatureMatrix, Graph, Hypergraph, ViewKind};
use hypergcl::netcl::{build_positive_sets, pairwise_loss, sample_negatives_distance, sample_negatives_similarity, SampleSets};
use hypergcl::oracles::{bfs_all_pairs, closeness_oracle};
use hypergcl::tensor::Matrix;
use hypergcl::views::{
    build_attribute_view, build_global_view, build_local_view, closeness_centrality, detect_communities, hyperedges_connected,
    AttributeViewConfig, GlobalViewConfig,
};

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (2usize..40).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n), 0..n * 3)
            .prop_map(move |edges| Graph::from_edges(n, edges.into_iter().map(|(u, v)| (u, v, 1.0))).unwrap())
    })
}

fn hypergraph_strategy(n: usize) -> impl Strategy<Value = Hypergraph> {
    prop::collection::vec(prop::collection::btree_set(0..n, 1..=n.min(8)), 1..12)
        .prop_map(move |edges| Hypergraph::new(n, edges.into_iter().map(|e| e.into_iter().collect()).collect(), ViewKind::Local).unwrap())
}

fn features_strategy(n: usize, d: usize) -> impl Strategy<Value = FeatureMatrix> {
    prop::collection::vec(-2.0f64..2.0, n * d).prop_map(move |v| FeatureMatrix::new(n, d, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjacency_is_symmetric_and_simple(g in graph_strategy()) {
        for u in 0..g.num_nodes() {
            let nbrs = g.neighbors(u);
            prop_assert!(nbrs.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(!nbrs.contains(&u));
            for &v in nbrs {
                prop_assert!(g.neighbors(v).binary_search(&u).is_ok());
            }
        }
    }

    #[test]
    fn memberships_transpose_hyperedges((n, h) in (3usize..30).prop_flat_map(|n| (Just(n), hypergraph_strategy(n)))) {
        for (j, e) in h.hyperedges().iter().enumerate() {
            prop_assert!(!e.is_empty());
            for &v in e {
                prop_assert!(v < n);
                prop_assert!(h.memberships(v).contains(&j));
            }
        }
        let total: usize = (0..n).map(|v| h.memberships(v).len()).sum();
        prop_assert_eq!(total, h.num_incidences());
        let round = Hypergraph::from_text(&h.to_text(), n).unwrap();
        prop_assert_eq!(round.hyperedges(), h.hyperedges());
    }

    #[test]
    fn closeness_matches_all_pairs_oracle(g in graph_strategy()) {
        let expected = closeness_oracle(&bfs_all_pairs(&g).unwrap());
        prop_assert_eq!(closeness_centrality(&g), expected);
    }

    #[test]
    fn local_view_has_one_ego_network_per_node(g in graph_strategy()) {
        let h = build_local_view(&g);
        prop_assert_eq!(h.num_hyperedges(), g.num_nodes());
        for v in 0..g.num_nodes() {
            let mut ego: Vec<usize> = g.neighbors(v).to_vec();
            ego.push(v);
            ego.sort_unstable();
            prop_assert_eq!(h.hyperedge(v), ego.as_slice());
        }
    }

    #[test]
    fn attribute_view_membership((n, x) in (6usize..30).prop_flat_map(|n| (Just(n), features_strategy(n, 3))), k in 1usize..5, s in 1usize..3) {
        let cfg = AttributeViewConfig { k_nn: k.min(n - 1), k_clusters: 4, s, ..Default::default() };
        let h = build_attribute_view(&x, &cfg).unwrap();
        for v in 0..n {
            prop_assert!(h.hyperedge(v).contains(&v));
            prop_assert_eq!(h.hyperedge(v).len(), cfg.k_nn + 1);
            let clusters = h.memberships(v).iter().filter(|&&j| j >= n).count();
            prop_assert!(clusters <= s);
        }
    }

    #[test]
    fn global_nodes_connect_every_hyperedge(g in graph_strategy(), n_g in 1usize..3, seed in 0u64..4) {
        prop_assume!(n_g <= g.num_nodes());
        let cover = detect_communities(&g, &BTreeMap::new(), seed).unwrap();
        prop_assume!(!cover.communities.is_empty());
        let cfg = GlobalViewConfig { n_g, ..Default::default() };
        let h = build_global_view(&g, &cover, &cfg).unwrap();
        prop_assert!(hyperedges_connected(&h));
        prop_assert_eq!(h.num_hyperedges(), cover.communities.len());
    }

    #[test]
    fn split_partitions_nodes(labels in prop::collection::vec(0usize..4, 10..200), seed in 0u64..100) {
        let s = split_nodes(&labels, (0.1, 0.1, 0.8), seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
    }

    #[test]
    fn augmentation_respects_incidence(
        (n, h) in (3usize..25).prop_flat_map(|n| (Just(n), hypergraph_strategy(n))),
        logit_seed in prop::collection::vec(-4.0f64..4.0, 200),
        seed in 0u64..1000,
        training in any::<bool>(),
    ) {
        let a = incidence_of(&h);
        let mut logits = MaskLogits::new(&a, &AugmentConfig::default()).unwrap();
        for (k, v) in logits.keep.iter_mut().enumerate() {
            *v = logit_seed[k % logit_seed.len()];
        }
        let aug = augment(&a, &logits, seed, training).unwrap();
        prop_assert!(aug.values.iter().all(|&v| v == 0.0 || v == 1.0));
        for i in 0..n {
            for j in 0..h.num_hyperedges() {
                prop_assert!(aug.get(i, j) <= a.get(i, j));
            }
        }
        prop_assert!(aug.surviving_hyperedges().iter().all(|e| !e.is_empty()));
    }

    #[test]
    fn segment_softmax_sums_to_one(
        (n, h) in (3usize..25).prop_flat_map(|n| (Just(n), hypergraph_strategy(n))),
        raw in prop::collection::vec(-30.0f64..30.0, 200),
    ) {
        let inc = Arc::new(IncidenceIndex::new(n, h.hyperedges()));
        let scores: Vec<f64> = (0..inc.nnz()).map(|p| raw[p % raw.len()]).collect();
        let mut tape = Tape::new();
        let s = tape.constant(Matrix::column(scores));
        for side in [Side::Edge, Side::Node] {
            let c = tape.segment_softmax(s, None, side, inc.clone());
            let v = &tape.value(c).data;
            let segments: Vec<Vec<usize>> = match side {
                Side::Edge => (0..inc.num_edges).map(|j| inc.edge_positions(j).collect()).collect(),
                Side::Node => (0..inc.num_nodes).map(|i| inc.node_positions(i).to_vec()).collect(),
            };
            for seg in segments.iter().filter(|s| !s.is_empty()) {
                let sum: f64 = seg.iter().map(|&p| v[p]).sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn negatives_avoid_positives(g in graph_strategy(), t in 1usize..10, seed in 0u64..50) {
        let n = g.num_nodes();
        let h = build_local_view(&g);
        let pos = build_positive_sets(&g, &[&h]);
        let x = FeatureMatrix::new(n, 2, (0..2 * n).map(|k| ((k as u64 * 7919 + seed) % 13) as f64 - 6.0).collect()).unwrap();
        for neg in [sample_negatives_distance(&g, &pos, t), sample_negatives_similarity(&x, &pos, t)] {
            for v in 0..n {
                prop_assert!(pos[v].contains(&v));
                prop_assert!(!neg[v].contains(&v));
                prop_assert!(neg[v].iter().all(|u| pos[v].binary_search(u).is_err()));
                prop_assert_eq!(neg[v].len(), t.min(n - pos[v].len()));
            }
        }
    }

    #[test]
    fn contrastive_loss_is_non_negative(
        n in 2usize..20,
        vals in prop::collection::vec(-3.0f64..3.0, 2 * 20 * 4),
        eta in 0.1f64..2.0,
    ) {
        let left = Matrix::from_vec(n, 4, vals[..n * 4].to_vec());
        let right = Matrix::from_vec(n, 4, vals[n * 4..n * 8].to_vec());
        let samples = SampleSets::self_only(n, eta);
        let l = pairwise_loss(&left, &right, &samples).unwrap();
        prop_assert!(l >= -1e-12 && l.is_finite());
    }

    #[test]
    fn config_hash_is_stable(lr in 1e-5f64..1.0, t in 1usize..50, seeds in prop::collection::vec(0u64..100, 1..5)) {
        let text = format!("[dataset]\nsbm = {{}}\n[trainer]\nlr = {lr:?}\nseeds = {seeds:?}\n[netcl]\nt = {t}\n");
        let a = RunConfigFile::parse(&text).unwrap();
        let b = RunConfigFile::parse(&format!("# header\n{text}\n")).unwrap();
        prop_assert_eq!(a.hash(), b.hash());
        prop_assert_eq!(a.train_config().lr, lr);
    }
}
