#![allow(dead_code)]

use encmap::embedding::EmbeddingMatrix;
use encmap::qre::{feature_vector, FeatureVector};
use encmap::spectral::{compute_spectrum, DensitySpectrum};
use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const EPS: f64 = encmap::qre::DEFAULT_EPSILON;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(seed: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

/// Gaussian embedding matrix with a mild column scaling so the spectrum is not flat.
pub fn embedding(seed: u64, n: usize, d: usize) -> EmbeddingMatrix<f64> {
    let mut a = gaussian(seed, n, d);
    for (j, mut c) in a.column_iter_mut().enumerate() {
        c *= 1.0 + 3.0 / (1.0 + j as f64);
    }
    EmbeddingMatrix::new(format!("enc-{seed}"), a).unwrap()
}

pub fn orthogonal(seed: u64, d: usize) -> DMatrix<f64> {
    let q = gaussian(seed, d, d).qr().q();
    assert!((q.tr_mul(&q) - DMatrix::identity(d, d)).amax() < 1e-12);
    q
}

pub fn spectrum(seed: u64, n: usize, d: usize) -> DensitySpectrum<f64> {
    compute_spectrum(&embedding(seed, n, d), 1e-12).unwrap()
}

pub fn features(seed: u64, n: usize, d: usize) -> FeatureVector<f64> {
    feature_vector(&spectrum(seed, n, d), EPS).unwrap()
}

pub fn random_features(seed: u64, n: usize, count: usize) -> Vec<FeatureVector<f64>> {
    let mut r = rng(seed);
    (0..count)
        .map(|i| {
            let v: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 2.0 - 0.5).collect();
            let total: f64 = v.iter().sum();
            FeatureVector::new(format!("v{i:03}"), v, EPS, total).unwrap()
        })
        .collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
