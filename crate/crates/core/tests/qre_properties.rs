mod common;

use common::*;
use encmap::qre::{closed_form_qre_total, feature_vector, qre, qre_dense_oracle};
use encmap::spectral::{compute_spectrum, DensitySpectrum};
use encmap::Error;
use proptest::prelude::*;

/// `(r_w, C_w)` for every row of the eigenvector matrix, computed directly.
fn row_masses(s: &DensitySpectrum<f64>) -> Vec<(f64, f64)> {
    let u = s.eigenvectors();
    (0..s.ambient_dim())
        .map(|w| {
            let mut c = 0.0;
            let mut cross = 0.0;
            for j in 0..s.rank() {
                c += u[(w, j)].powi(2);
                cross += u[(w, j)].powi(2) * s.eigenvalues()[j].ln();
            }
            (1.0 - c, cross)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn self_divergence_is_zero(seed in 0u64..10_000, n in 2usize..40, d in 1usize..40) {
        let s = spectrum(seed, n, d);
        let eps = (s.min_eigenvalue() * 0.5).min(EPS);
        let b = qre(&s, &s, eps).unwrap();
        prop_assert!(b.total.abs() < 1e-9, "{}", b.total);
    }

    #[test]
    fn sum_identity_and_closed_form(seed in 0u64..10_000, n in 2usize..64, d in 1usize..64) {
        let s = spectrum(seed, n, d);
        prop_assume!(s.min_eigenvalue() > EPS);
        let fv = feature_vector(&s, EPS).unwrap();
        let sum: f64 = fv.values().iter().sum();
        let base = DensitySpectrum::unit_base(n).unwrap();
        let direct = qre(&base, &s, EPS).unwrap().total;
        prop_assert!(rel_close(sum, direct, 1e-8), "{sum} vs {direct}");
        prop_assert!(rel_close(sum, closed_form_qre_total(&s, EPS), 1e-8));
        prop_assert!(rel_close(sum, fv.qre_total(), 1e-12));
    }

    #[test]
    fn mass_is_conserved(seed in 0u64..10_000, n in 2usize..30, d in 1usize..60) {
        let s = spectrum(seed, n, d);
        prop_assume!(s.min_eigenvalue() > EPS);
        let base = DensitySpectrum::unit_base(n).unwrap();
        let b = qre(&base, &s, EPS).unwrap();
        for (c, r) in b.captured_mass.iter().zip(&b.residual_mass) {
            prop_assert!((c + r - 1.0).abs() < 1e-15);
            if s.rank() == n {
                prop_assert!(*r <= 1e-10);
            }
        }
        prop_assert!((b.recompute_total() - b.total).abs() < 1e-12);
    }

    #[test]
    fn features_ignore_rotation_and_scale(seed in 0u64..10_000, n in 2usize..40, d in 1usize..16, c in 0.01f64..100.0) {
        let m = embedding(seed, n, d);
        let s = compute_spectrum(&m, 1e-12).unwrap();
        prop_assume!(s.min_eigenvalue() > EPS);
        let base = feature_vector(&s, EPS).unwrap();
        let q = orthogonal(seed ^ 0xabc, d);
        for variant in [m.transformed(&q).unwrap(), m.scaled(c).unwrap()] {
            let fv = feature_vector(&compute_spectrum(&variant, 1e-12).unwrap(), EPS).unwrap();
            for (a, b) in fv.values().iter().zip(base.values()) {
                prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn full_rank_offset_identity(seed in 0u64..10_000, n in 2usize..64) {
        let s1 = spectrum(seed, n, 2 * n);
        let s2 = spectrum(seed + 7919, n, 2 * n);
        prop_assume!(s1.rank() == n && s2.rank() == n);
        prop_assume!(s1.min_eigenvalue() > EPS && s2.min_eigenvalue() > EPS);
        let f1 = feature_vector(&s1, EPS).unwrap();
        let f2 = feature_vector(&s2, EPS).unwrap();
        // ‖ū_w‖² with ū_{w,j} = u_{w,j}·sqrt(−ln μ_j)
        let weighted = |s: &DensitySpectrum<f64>, w: usize| -> f64 {
            (0..n)
                .map(|j| {
                    let v = s.eigenvectors()[(w, j)] * (-s.eigenvalues()[j].ln()).sqrt();
                    v * v
                })
                .sum()
        };
        for w in 0..n {
            let lhs = f1.values()[w] - f2.values()[w];
            let rhs = (weighted(&s1, w) - weighted(&s2, w)) / n as f64;
            prop_assert!((lhs - rhs).abs() < 1e-9, "w={w}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn positive_when_residual_dominates(seed in 0u64..10_000, n in 4usize..40, d in 1usize..8) {
        let s = spectrum(seed, n, d);
        prop_assume!(s.min_eigenvalue() > EPS);
        let fv = feature_vector(&s, EPS).unwrap();
        let ln_base = (1.0 / n as f64).ln();
        for (w, (r, c)) in row_masses(&s).into_iter().enumerate() {
            if r >= (c - ln_base) / -EPS.ln() + 1e-12 {
                prop_assert!(fv.values()[w] > 0.0);
            }
        }
    }
}

#[test]
fn qre_matches_dense_logarithms() {
    for seed in 0..10 {
        let n = 32;
        let rho = spectrum(seed, n, 5 + seed as usize);
        let sigma = spectrum(seed + 100, n, 40);
        let fast = qre(&rho, &sigma, EPS).unwrap().total;
        let dense = qre_dense_oracle(&rho.to_dense(), &sigma, EPS).unwrap();
        assert!((fast - dense).abs() < 1e-7, "seed {seed}: {fast} vs {dense}");
    }
}

#[test]
fn rank_deficient_reference_uses_epsilon() {
    let n = 24;
    let rho = spectrum(1, n, 30);
    let sigma = spectrum(2, n, 4);
    assert_eq!(sigma.rank(), 4);
    let fast = qre(&rho, &sigma, EPS).unwrap();
    let dense = qre_dense_oracle(&rho.to_dense(), &sigma, EPS).unwrap();
    assert!((fast.total - dense).abs() < 1e-7);
    assert!(fast.residual_mass.iter().any(|&r| r > 0.5));
}

#[test]
fn epsilon_must_sit_below_the_spectrum() {
    let s = spectrum(3, 10, 3);
    let too_big = s.min_eigenvalue() * 2.0;
    assert!(matches!(feature_vector(&s, too_big), Err(Error::Parameter(_))));
    assert!(matches!(feature_vector(&s, 0.0), Err(Error::Parameter(_))));
    let other = spectrum(4, 11, 3);
    assert!(matches!(qre(&s, &other, EPS), Err(Error::Shape(_))));
}

#[test]
fn identical_inputs_give_identical_features() {
    let m = embedding(5, 50, 10);
    let a = feature_vector(&compute_spectrum(&m, 1e-12).unwrap(), EPS).unwrap();
    let b = feature_vector(&compute_spectrum(&m.clone(), 1e-12).unwrap(), EPS).unwrap();
    let d = encmap::distance::l1_distance(&a, &b).unwrap();
    assert!(d < 1e-12);
}
