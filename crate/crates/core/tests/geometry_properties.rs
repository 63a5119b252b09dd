mod common;

use common::*;
use encmap::distance::{
    hierarchical_cluster, l1_distance, nearest_neighbors, pairwise_distances, Linkage,
};
use encmap::projection::{fit_pca, tsne, TsneParams, PERPLEXITY_TOLERANCE};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn l1_is_a_metric(seed in 0u64..100_000, n in 1usize..50) {
        let v = random_features(seed, n, 3);
        let (a, b, c) = (&v[0], &v[1], &v[2]);
        let ab = l1_distance(a, b).unwrap();
        prop_assert_eq!(l1_distance(a, a).unwrap(), 0.0);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, l1_distance(b, a).unwrap());
        let ac = l1_distance(a, c).unwrap();
        let cb = l1_distance(c, b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn neighbors_ignore_input_order(seed in 0u64..10_000, m in 3usize..20, k in 1usize..3, shift in 1usize..19) {
        let v = random_features(seed, 12, m);
        let mut rotated = v.clone();
        rotated.rotate_left(shift % m);
        let d1 = pairwise_distances(&v).unwrap();
        let d2 = pairwise_distances(&rotated).unwrap();
        for fv in &v {
            let a = nearest_neighbors(&d1, fv.encoder_id(), k).unwrap();
            let b = nearest_neighbors(&d2, fv.encoder_id(), k).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn average_linkage_is_monotone(seed in 0u64..10_000, m in 2usize..30) {
        let d = pairwise_distances(&random_features(seed, 8, m)).unwrap();
        let root = hierarchical_cluster(&d, Linkage::Average).unwrap();
        prop_assert!(root.is_monotone());
        prop_assert_eq!(root.member_count, m);
        let mut leaves: Vec<&str> = root.leaves();
        leaves.sort_unstable();
        let mut ids: Vec<&str> = d.ids().iter().map(String::as_str).collect();
        ids.sort_unstable();
        prop_assert_eq!(leaves, ids);
    }

    #[test]
    fn pca_never_stretches_distances(seed in 0u64..10_000, m in 2usize..25, k in 1usize..6) {
        let v = random_features(seed, 15, m);
        let k = k.min(m);
        let model = fit_pca(&v, k).unwrap();
        let z: Vec<_> = v.iter().map(|f| model.transform_row(f.values()).unwrap()).collect();
        for i in 0..m {
            for j in 0..m {
                let orig: f64 = v[i]
                    .values()
                    .iter()
                    .zip(v[j].values())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                prop_assert!((&z[i] - &z[j]).norm() <= orig + 1e-10);
            }
        }
    }
}

#[test]
fn tsne_hits_perplexity_and_settles() {
    let v = random_features(11, 20, 40);
    let d = pairwise_distances(&v).unwrap();
    let layout = tsne(&d, &TsneParams::new(10.0, 1000, 200.0, 3)).unwrap();
    let diag = layout.diagnostics.as_ref().unwrap();
    for p in &diag.achieved_perplexity {
        assert!((p - 10.0).abs() < PERPLEXITY_TOLERANCE, "{p}");
    }
    let tail = &diag.kl_history[diag.kl_history.len() - 100..];
    for w in tail.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "{} -> {}", w[0], w[1]);
    }
    assert!(layout.coords.iter().all(|x| x.is_finite()));
}
