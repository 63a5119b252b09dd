mod common;

use common::*;
use encmap::embedding::EmbeddingMatrix;
use encmap::linalg::{orthonormality_defect, subspace_distance};
use encmap::spectral::{compute_spectrum, explicit_spectrum_oracle};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn max_eig_diff(a: &encmap::DensitySpectrum, b: &encmap::DensitySpectrum) -> f64 {
    assert_eq!(a.rank(), b.rank());
    (a.eigenvalues() - b.eigenvalues()).amax()
}

#[test]
fn svd_path_matches_dense_eigendecomposition() {
    for seed in 0..12 {
        let n = 20 + (seed as usize * 17) % 100;
        let d = 3 + (seed as usize * 5) % 20;
        let m = embedding(seed, n, d);
        let fast = compute_spectrum(&m, 1e-12).unwrap();
        let slow = explicit_spectrum_oracle(&m).unwrap();
        assert!(max_eig_diff(&fast, &slow) < 1e-10, "seed {seed}");
        assert!(subspace_distance(fast.eigenvectors(), slow.eigenvectors()) < 1e-6);
        assert!(orthonormality_defect(fast.eigenvectors()) < 1e-10);
    }
}

#[test]
fn oracle_rank_equals_numerical_rank() {
    // rank-3 matrix in 8 columns
    let a = gaussian(1, 40, 3) * gaussian(2, 3, 8);
    let m = EmbeddingMatrix::new("low-rank", a).unwrap();
    let slow = explicit_spectrum_oracle(&m).unwrap();
    assert_eq!(slow.rank(), 3);
    assert!(slow.eigenvalues().iter().all(|&l| l >= 0.0));
    assert_eq!(compute_spectrum(&m, 1e-12).unwrap().rank(), 3);
}

#[test]
fn wide_matrices_are_capped_at_n() {
    let m = embedding(3, 6, 20);
    let s = compute_spectrum(&m, 1e-12).unwrap();
    assert_eq!(s.rank(), 6);
    assert!((s.trace() - 1.0).abs() < 1e-12);
}

#[test]
fn f32_path_agrees_with_f64() {
    let m = embedding(4, 30, 6);
    let s64 = compute_spectrum(&m, 1e-12).unwrap();
    let s32 = compute_spectrum(&m.cast::<f32>(), 1e-6).unwrap();
    assert_eq!(s32.rank(), s64.rank());
    for (a, b) in s32.eigenvalues().iter().zip(s64.eigenvalues().iter()) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scale_leaves_spectrum_unchanged(seed in 0u64..10_000, n in 4usize..40, d in 1usize..12, c in 1e-3f64..1e3) {
        let m = embedding(seed, n, d);
        let a = compute_spectrum(&m, 1e-12).unwrap();
        let b = compute_spectrum(&m.scaled(c).unwrap(), 1e-12).unwrap();
        prop_assert!(max_eig_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn rotation_leaves_spectrum_unchanged(seed in 0u64..10_000, n in 4usize..40, d in 1usize..12) {
        let m = embedding(seed, n, d);
        let q = orthogonal(seed + 1, d);
        let a = compute_spectrum(&m, 1e-12).unwrap();
        let b = compute_spectrum(&m.transformed(&q).unwrap(), 1e-12).unwrap();
        prop_assert!(max_eig_diff(&a, &b) < 1e-10);
        prop_assert!(subspace_distance(a.eigenvectors(), b.eigenvectors()) < 1e-6);
    }

    #[test]
    fn eigenvalues_form_a_distribution(seed in 0u64..10_000, n in 1usize..30, d in 1usize..30) {
        let s = spectrum(seed, n, d);
        prop_assert!(s.rank() <= n.min(d));
        prop_assert!((s.trace() - 1.0).abs() < 1e-10);
        prop_assert!(s.eigenvalues().iter().all(|&l| l > 1e-12));
        let v = s.eigenvalues().as_slice();
        prop_assert!(v.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn dense_reconstruction_matches_gram() {
    let m = embedding(7, 15, 4);
    let s = compute_spectrum(&m, 1e-12).unwrap();
    let g: DMatrix<f64> = m.matrix() * m.matrix().transpose();
    let rho = &g / g.trace();
    assert!((s.to_dense() - rho).amax() < 1e-14);
}
