//! Noisy copies of the unit base encoder used for end-to-end validation.
//!
//! Each row `x` of the N×N identity becomes `x + s·n/‖n‖` with
//! `n ~ N(0, σ²I)` and step length `s` (the noise scale).

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Generator and sampler recorded in sidecars.
pub const RNG_DESCRIPTION: &str = "ChaCha8Rng (rand_chacha 0.10), ziggurat StandardNormal (rand_distr 0.6)";

const MIN_NOISE_NORM: f64 = 1e-30;
const MAX_REDRAWS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseGroup<T: Scalar> {
    /// Inclusive `[low, high]` range for σ².
    pub sigma2_range: (T, T),
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec<T: Scalar> {
    pub ambient_dim: usize,
    pub groups: Vec<NoiseGroup<T>>,
    pub noise_scale: T,
    pub seed: u64,
}

impl<T: Scalar> SyntheticSpec<T> {
    /// Two groups, σ² in `[0, 1]` and `[3, 4]`, ten matrices each, step 0.5.
    pub fn two_noise_levels(ambient_dim: usize, seed: u64) -> Self {
        SyntheticSpec {
            ambient_dim,
            groups: vec![
                NoiseGroup {
                    sigma2_range: (T::zero(), T::one()),
                    count: 10,
                },
                NoiseGroup {
                    sigma2_range: (T::lit(3.0), T::lit(4.0)),
                    count: 10,
                },
            ],
            noise_scale: T::lit(0.5),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ambient_dim == 0 {
            return Err(Error::Parameter("ambient_dim must be >= 1".into()));
        }
        if self.groups.is_empty() {
            return Err(Error::Parameter("at least one noise group is required".into()));
        }
        for (g, group) in self.groups.iter().enumerate() {
            let (lo, hi) = group.sigma2_range;
            if !(lo >= T::zero()) || !(lo <= hi) || !hi.is_finite() {
                return Err(Error::Parameter(format!(
                    "group {g}: sigma2 range [{lo}, {hi}] must satisfy 0 <= low <= high"
                )));
            }
            if group.count == 0 {
                return Err(Error::Parameter(format!("group {g}: count must be >= 1")));
            }
        }
        if !self.noise_scale.is_finite() {
            return Err(Error::Parameter("noise_scale must be finite".into()));
        }
        Ok(())
    }
}

/// One generated encoder and the labels that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEncoder<T: Scalar> {
    pub group: usize,
    pub index: usize,
    pub sigma2: T,
    /// Seed passed to [`perturb`].
    pub seed: u64,
    pub matrix: EmbeddingMatrix<T>,
}

/// The n×n identity, i.e. the embedding matrix of the unit base encoder.
pub fn base_matrix<T: Scalar>(n: usize) -> Result<EmbeddingMatrix<T>> {
    EmbeddingMatrix::new("unit-base", DMatrix::identity(n, n))
}

/// Adds a step of length `noise_scale` in a Gaussian-random direction to
/// every row. `sigma2 == 0` returns the input unchanged.
pub fn perturb<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    sigma2: T,
    noise_scale: T,
    seed: u64,
) -> Result<EmbeddingMatrix<T>> {
    if !(sigma2 >= T::zero()) || !sigma2.is_finite() {
        return Err(Error::Parameter(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    if sigma2 == T::zero() {
        return Ok(matrix.clone());
    }
    let std = sigma2.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = matrix.matrix().clone();
    let d = values.ncols();
    let mut noise = vec![T::zero(); d];
    for i in 0..values.nrows() {
        let mut attempts = 0;
        let norm = loop {
            for v in noise.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = T::lit(z) * std;
            }
            let norm = noise.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
            if norm >= T::lit(MIN_NOISE_NORM) {
                break norm;
            }
            attempts += 1;
            if attempts >= MAX_REDRAWS {
                return Err(Error::Numerical(format!(
                    "noise vector for row {i} stayed below {MIN_NOISE_NORM:e} after {MAX_REDRAWS} draws"
                )));
            }
        };
        for (j, &v) in noise.iter().enumerate() {
            values[(i, j)] += noise_scale * v / norm;
        }
    }
    EmbeddingMatrix::new(matrix.encoder_id().to_string(), values)
}

/// SplitMix64 finalizer, used to derive independent per-matrix seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for matrix `index` of group `group`; `stream` separates the σ² draw
/// from the noise draw.
pub fn derived_seed(seed: u64, group: usize, index: usize, stream: u64) -> u64 {
    mix(mix(mix(seed ^ stream) ^ group as u64) ^ index as u64)
}

pub fn synthetic_encoder_id(group: usize, index: usize) -> String {
    format!("synth-g{group}-{index:03}")
}

/// Generates every group's matrices. Parallel and serial runs agree because
/// each matrix has its own derived seeds.
pub fn generate<T: Scalar>(spec: &SyntheticSpec<T>) -> Result<Vec<SyntheticEncoder<T>>> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = spec
        .groups
        .iter()
        .enumerate()
        .flat_map(|(g, group)| (0..group.count).map(move |i| (g, i)))
        .collect();
    let base = base_matrix::<T>(spec.ambient_dim)?;
    jobs.par_iter()
        .map(|&(g, i)| {
            let (lo, hi) = spec.groups[g].sigma2_range;
            let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(spec.seed, g, i, 1));
            let u: f64 = rng.random();
            let sigma2 = lo + (hi - lo) * T::lit(u);
            let noise_seed = derived_seed(spec.seed, g, i, 2);
            let mut matrix = perturb(&base, sigma2, spec.noise_scale, noise_seed)?;
            matrix.set_encoder_id(synthetic_encoder_id(g, i));
            Ok(SyntheticEncoder {
                group: g,
                index: i,
                sigma2,
                seed: noise_seed,
                matrix,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qre::{feature_vector, DEFAULT_EPSILON};
    use crate::spectral::compute_spectrum;

    #[test]
    fn base_matrix_is_identity() {
        let b = base_matrix::<f64>(2).unwrap();
        assert_eq!(b.to_row_major(), vec![1.0, 0.0, 0.0, 1.0]);
        let s = compute_spectrum(&base_matrix::<f64>(6).unwrap(), 1e-12).unwrap();
        assert!(s.eigenvalues().iter().all(|&l| (l - 1.0 / 6.0).abs() < 1e-15));
        let fv = feature_vector(&s, DEFAULT_EPSILON).unwrap();
        assert!(fv.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn step_length_is_exact() {
        let base = base_matrix::<f64>(30).unwrap();
        let p = perturb(&base, 2.5, 0.5, 7).unwrap();
        for i in 0..30 {
            let step = (p.matrix().row(i) - base.matrix().row(i)).norm();
            assert!((step - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_variance_is_identity_copy() {
        let base = base_matrix::<f64>(4).unwrap();
        assert_eq!(perturb(&base, 0.0, 0.5, 1).unwrap(), base);
    }

    #[test]
    fn deterministic_per_seed() {
        let base = base_matrix::<f64>(8).unwrap();
        assert_eq!(
            perturb(&base, 1.0, 0.5, 99).unwrap(),
            perturb(&base, 1.0, 0.5, 99).unwrap()
        );
        assert_ne!(
            perturb(&base, 1.0, 0.5, 99).unwrap(),
            perturb(&base, 1.0, 0.5, 100).unwrap()
        );
    }

    /// The normalized direction of an isotropic Gaussian does not depend on
    /// its variance, so the same seed yields the same matrix for any σ² > 0.
    #[test]
    fn direction_is_variance_free() {
        let base = base_matrix::<f64>(16).unwrap();
        let low = perturb(&base, 0.3, 0.5, 5).unwrap();
        let high = perturb(&base, 3.7, 0.5, 5).unwrap();
        let diff = (low.matrix() - high.matrix()).amax();
        assert!(diff < 1e-14, "{diff}");
    }

    #[test]
    fn negative_variance_rejected() {
        let base = base_matrix::<f64>(2).unwrap();
        assert!(perturb(&base, -1.0, 0.5, 0).is_err());
    }

    #[test]
    fn spec_shape_and_labels() {
        let spec = SyntheticSpec::<f64>::two_noise_levels(12, 3);
        let out = generate(&spec).unwrap();
        assert_eq!(out.len(), 20);
        for e in &out {
            let (lo, hi) = spec.groups[e.group].sigma2_range;
            assert!(e.sigma2 >= lo && e.sigma2 <= hi);
            assert_eq!(e.matrix.n_rows(), 12);
            assert_eq!(e.matrix.encoder_id(), synthetic_encoder_id(e.group, e.index));
        }
        assert_eq!(out.iter().filter(|e| e.group == 1).count(), 10);
        assert_eq!(generate(&spec).unwrap(), out);
    }

    #[test]
    fn unperturbed_group_gives_zero_features() {
        let spec = SyntheticSpec {
            ambient_dim: 5,
            groups: vec![NoiseGroup {
                sigma2_range: (0.0, 0.0),
                count: 1,
            }],
            noise_scale: 0.5,
            seed: 0,
        };
        let out = generate(&spec).unwrap();
        let s = compute_spectrum(&out[0].matrix, 1e-12).unwrap();
        let fv = feature_vector(&s, DEFAULT_EPSILON).unwrap();
        assert!(fv.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SyntheticSpec::<f64>::two_noise_levels(4, 0);
        spec.groups[0].sigma2_range = (2.0, 1.0);
        assert!(generate(&spec).is_err());
        spec.groups[0].sigma2_range = (-1.0, 1.0);
        assert!(generate(&spec).is_err());
        spec.groups[0].sigma2_range = (0.0, 1.0);
        spec.groups[1].count = 0;
        assert!(generate(&spec).is_err());
    }
}
