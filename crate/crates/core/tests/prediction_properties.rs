mod common;

use common::*;
use encmap::prediction::{
    cross_val_predict, preprocess, run_prediction_suite, spearman, CvOptions, ScoreTable,
    SuiteOptions,
};
use encmap::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::RngExt;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spearman_ignores_monotone_maps(seed in 0u64..10_000, m in 3usize..40) {
        let mut r = rng(seed);
        let x: Vec<f64> = (0..m).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
        let y: Vec<f64> = (0..m).map(|_| r.random::<f64>()).collect();
        let base = spearman(&x, &y);
        let mapped: Vec<f64> = x.iter().map(|v| v.powi(3) + v.exp()).collect();
        let other = spearman(&mapped, &y);
        match (base, other) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a.coefficient - b.coefficient).abs() < 1e-12);
                prop_assert!((a.p_value - b.p_value).abs() < 1e-9);
            }
            (Err(Error::UndefinedCorrelation(_)), Err(Error::UndefinedCorrelation(_))) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }
}

/// Encoders whose score is a noisy linear function of their first feature.
fn planted(seed: u64, m: usize, n: usize) -> (Vec<encmap::FeatureVector>, ScoreTable) {
    let v = random_features(seed, n, m);
    let mut r = rng(seed + 1);
    let mut table = ScoreTable::default();
    for fv in &v {
        let noise: f64 = r.random::<f64>() * 0.05;
        table.insert(fv.encoder_id(), "planted", 3.0 * fv.values()[0] + noise).unwrap();
    }
    (v, table)
}

#[test]
fn preprocessed_features_are_centred() {
    let v = random_features(4, 30, 25);
    let pre = preprocess(&v, 50).unwrap();
    assert_eq!(pre.features.ncols(), 25);
    for c in pre.features.column_iter() {
        assert!(c.mean().abs() < 1e-10);
    }
}

#[test]
fn small_tasks_are_skipped() {
    let v = random_features(5, 10, 12);
    let mut table = ScoreTable::default();
    for (i, fv) in v.iter().enumerate() {
        table.insert(fv.encoder_id(), "full", i as f64).unwrap();
        if i < 9 {
            table.insert(fv.encoder_id(), "small", i as f64).unwrap();
        }
    }
    let res = run_prediction_suite(&v, &table, &SuiteOptions::default()).unwrap();
    assert_eq!(res.reports.len(), 1);
    assert_eq!(res.reports[0].task_name, "full");
    assert_eq!(res.skipped.len(), 1);
    assert_eq!(res.skipped[0].0, "small");
}

#[test]
fn scored_encoders_need_features() {
    let v = random_features(6, 10, 12);
    let mut table = ScoreTable::default();
    table.insert("nobody", "t", 1.0).unwrap();
    let err = run_prediction_suite(&v, &table, &SuiteOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
}

#[test]
fn planted_signal_beats_shuffled_targets() {
    let (v, table) = planted(7, 60, 12);
    let opts = SuiteOptions::default();
    let real = run_prediction_suite(&v, &table, &opts).unwrap();
    assert!(real.reports[0].spearman > 0.8, "{}", real.reports[0].spearman);

    let ids: Vec<&str> = v.iter().map(|f| f.encoder_id()).collect();
    let scores: Vec<f64> = ids.iter().map(|id| table.tasks["planted"][*id]).collect();
    let mut r = rng(99);
    let mut total = 0.0;
    let rounds = 20;
    for _ in 0..rounds {
        let mut shuffled = scores.clone();
        shuffled.shuffle(&mut r);
        let mut t = ScoreTable::default();
        for (id, s) in ids.iter().zip(&shuffled) {
            t.insert(id, "planted", *s).unwrap();
        }
        let res = run_prediction_suite(&v, &t, &opts).unwrap();
        let rho = res.reports[0].spearman;
        total += if rho.is_nan() { 0.0 } else { rho };
    }
    let mean = total / rounds as f64;
    assert!(mean.abs() < 0.2, "shuffled mean spearman {mean}");
}

#[test]
fn held_out_target_does_not_leak_into_its_prediction() {
    let (v, _) = planted(8, 30, 6);
    let x = DMatrix::from_fn(30, 6, |i, j| v[i].values()[j]);
    let y = DVector::from_fn(30, |i, _| x[(i, 0)] * 2.0 + x[(i, 3)]);
    let opts = CvOptions::default();
    let base = cross_val_predict(&x, &y, &opts).unwrap();
    for i in [0, 13, 29] {
        let mut y2 = y.clone();
        y2[i] += 50.0;
        let moved = cross_val_predict(&x, &y2, &opts).unwrap();
        assert_eq!(base.predictions[i], moved.predictions[i], "row {i}");
    }
}
