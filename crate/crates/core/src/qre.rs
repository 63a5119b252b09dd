//! Quantum relative entropy with residual-mass padding, and the per-axis
//! feature vectors obtained against the unit base encoder `(1/N)·I`.
//!
//! For eigenpairs `(λ_i, v_i)` of ρ and `(μ_j, u_j)` of σ, with σ padded by
//! `ε` on its null space:
//!
//! ```text
//! c_i = Σ_j (v_iᵀu_j)²            captured mass
//! r_i = 1 − c_i                   residual mass
//! C_i = Σ_j (v_iᵀu_j)² ln μ_j     aligned cross entropy
//! S(ρ‖σ_ε) = Σ_i λ_i ln λ_i − Σ_i λ_i (C_i + r_i ln ε)
//! ```
//!
//! The unit base has `λ_w = 1/N` and `v_w = e_w`, so `v_wᵀu_j` is just the
//! w-th coordinate of `u_j` and the w-th summand becomes feature `φ_w`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::binfmt::{ByteReader, ByteWriter};
use crate::embedding::file_stem;
use crate::error::{Error, Result};
use crate::linalg::jacobi_eigen;
use crate::scalar::{xlnx, Scalar};
use crate::spectral::DensitySpectrum;

pub const FEATURE_MAGIC: &[u8; 4] = b"EFVC";
pub const FEATURE_VERSION: u32 = 1;

/// `e⁻¹²`.
pub const DEFAULT_EPSILON: f64 = 6.14421235332821e-6;
/// Largest N accepted by [`qre_dense_oracle`].
pub const DENSE_ORACLE_MAX_N: usize = 512;

/// Captured mass beyond `1 + MASS_GUARD` signals non-orthonormal inputs.
const MASS_GUARD: f64 = 1e-6;
const SUM_REL_TOLERANCE: f64 = 1e-8;

/// Per-eigenvector terms of one QRE evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct QreBreakdown<T: Scalar> {
    pub eigenvalues: Vec<T>,
    pub captured_mass: Vec<T>,
    pub residual_mass: Vec<T>,
    pub aligned_cross_entropy: Vec<T>,
    pub total: T,
    pub epsilon: T,
}

impl<T: Scalar> QreBreakdown<T> {
    /// `Σ λ ln λ − Σ λ (C + r ln ε)` recomputed from the stored components.
    pub fn recompute_total(&self) -> T {
        let ln_eps = self.epsilon.ln();
        self.eigenvalues
            .iter()
            .zip(&self.aligned_cross_entropy)
            .zip(&self.residual_mass)
            .fold(T::zero(), |acc, ((&l, &c), &r)| {
                acc + xlnx(l) - l * (c + r * ln_eps)
            })
    }
}

/// QRE-derived coordinates of one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T: Scalar> {
    encoder_id: String,
    values: Vec<T>,
    epsilon: T,
    qre_total: T,
}

impl<T: Scalar> FeatureVector<T> {
    /// Wraps raw values, checking that they sum to `qre_total`.
    pub fn new(
        encoder_id: impl Into<String>,
        values: Vec<T>,
        epsilon: T,
        qre_total: T,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("empty feature vector".into()));
        }
        if !(epsilon > T::zero()) {
            return Err(Error::Validation(format!("epsilon {epsilon} is not positive")));
        }
        if values.iter().any(|v| !v.is_finite()) || !qre_total.is_finite() {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        let sum = ordered_sum(&values);
        if !rel_close(sum, qre_total, T::tol(SUM_REL_TOLERANCE)) {
            return Err(Error::Validation(format!(
                "feature values sum to {sum} but qre_total is {qre_total}"
            )));
        }
        Ok(FeatureVector {
            encoder_id: encoder_id.into(),
            values,
            epsilon,
            qre_total,
        })
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn set_encoder_id(&mut self, id: impl Into<String>) {
        self.encoder_id = id.into();
    }

    pub fn ambient_dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn qre_total(&self) -> T {
        self.qre_total
    }

    pub fn min_value(&self) -> T {
        self.values
            .iter()
            .copied()
            .fold(self.values[0], |a, b| a.min(b))
    }
}

fn ordered_sum<T: Scalar>(values: &[T]) -> T {
    values.iter().fold(T::zero(), |acc, &v| acc + v)
}

fn rel_close<T: Scalar>(a: T, b: T, rel: T) -> bool {
    (a - b).abs() <= rel * T::one().max(a.abs()).max(b.abs())
}

fn check_epsilon<T: Scalar>(sigma: &DensitySpectrum<T>, epsilon: T) -> Result<()> {
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::Parameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let floor = sigma.min_eigenvalue();
    if epsilon >= floor {
        return Err(Error::Parameter(format!(
            "epsilon {epsilon:e} must be below the smallest retained eigenvalue {floor:e} of {}; \
             lower --epsilon or raise --rank-tol",
            sigma.encoder_id()
        )));
    }
    Ok(())
}

/// Clamps accumulated captured mass to `[0, 1]`, rejecting values that drift
/// further than rounding can explain.
fn clamp_mass<T: Scalar>(c: T, index: usize) -> Result<T> {
    let guard = T::tol(MASS_GUARD);
    if c > T::one() + guard || c < -guard {
        return Err(Error::Numerical(format!(
            "captured mass {c} at index {index} is outside [0, 1]; eigenvectors are not orthonormal"
        )));
    }
    Ok(c.max(T::zero()).min(T::one()))
}

/// `S(ρ‖σ_ε)` for two spectra over the same N, via the K_ρ×K_σ overlap matrix.
pub fn qre<T: Scalar>(
    rho: &DensitySpectrum<T>,
    sigma: &DensitySpectrum<T>,
    epsilon: T,
) -> Result<QreBreakdown<T>> {
    if rho.ambient_dim() != sigma.ambient_dim() {
        return Err(Error::Shape(format!(
            "ambient dimensions differ: {} has N={}, {} has N={}",
            rho.encoder_id(),
            rho.ambient_dim(),
            sigma.encoder_id(),
            sigma.ambient_dim()
        )));
    }
    check_epsilon(sigma, epsilon)?;
    let overlap = rho.eigenvectors().tr_mul(sigma.eigenvectors());
    let ln_mu: Vec<T> = sigma.eigenvalues().iter().map(|m| m.ln()).collect();
    let ln_eps = epsilon.ln();
    let k_rho = rho.rank();
    let mut out = QreBreakdown {
        eigenvalues: rho.eigenvalues().iter().copied().collect(),
        captured_mass: Vec::with_capacity(k_rho),
        residual_mass: Vec::with_capacity(k_rho),
        aligned_cross_entropy: Vec::with_capacity(k_rho),
        total: T::zero(),
        epsilon,
    };
    let mut total = T::zero();
    for i in 0..k_rho {
        let mut captured = T::zero();
        let mut cross = T::zero();
        for (j, &lm) in ln_mu.iter().enumerate() {
            let p2 = overlap[(i, j)] * overlap[(i, j)];
            captured += p2;
            cross += p2 * lm;
        }
        let c = clamp_mass(captured, i)?;
        let r = T::one() - c;
        let lambda = out.eigenvalues[i];
        total += xlnx(lambda) - lambda * (cross + r * ln_eps);
        out.captured_mass.push(c);
        out.residual_mass.push(r);
        out.aligned_cross_entropy.push(cross);
    }
    out.total = total;
    Ok(out)
}

/// Feature vector of `sigma` against the unit base encoder.
///
/// `φ_w = (1/N) ln(1/N) − (1/N)(C_w + r_w ln ε)` where the sums run over the
/// w-th row of the eigenvector matrix of `sigma`.
pub fn feature_vector<T: Scalar>(sigma: &DensitySpectrum<T>, epsilon: T) -> Result<FeatureVector<T>> {
    check_epsilon(sigma, epsilon)?;
    let n = sigma.ambient_dim();
    let u = sigma.eigenvectors();
    let ln_mu: Vec<T> = sigma.eigenvalues().iter().map(|m| m.ln()).collect();
    let ln_eps = epsilon.ln();
    let lambda = T::one() / T::from_usize_lossy(n);
    let self_term = xlnx(lambda);
    let mut values = Vec::with_capacity(n);
    for w in 0..n {
        let mut captured = T::zero();
        let mut cross = T::zero();
        for (j, &lm) in ln_mu.iter().enumerate() {
            let p2 = u[(w, j)] * u[(w, j)];
            captured += p2;
            cross += p2 * lm;
        }
        let c = clamp_mass(captured, w)?;
        let r = T::one() - c;
        values.push(self_term - lambda * (cross + r * ln_eps));
    }
    let total = ordered_sum(&values);
    let fv = FeatureVector::new(sigma.encoder_id().to_string(), values, epsilon, total)?;
    if fv.min_value() <= T::zero() {
        log::debug!(
            "{}: minimum feature value {} is not positive",
            fv.encoder_id,
            fv.min_value()
        );
    }
    Ok(fv)
}

/// Closed form of `Σ_w φ_w`: `−ln N − (1/N)Σ_j ln μ_j − ((N−K)/N) ln ε`.
pub fn closed_form_qre_total<T: Scalar>(sigma: &DensitySpectrum<T>, epsilon: T) -> T {
    let n = T::from_usize_lossy(sigma.ambient_dim());
    let k = T::from_usize_lossy(sigma.rank());
    let sum_ln_mu = sigma
        .eigenvalues()
        .iter()
        .fold(T::zero(), |acc, m| acc + m.ln());
    -n.ln() - sum_ln_mu / n - (n - k) / n * epsilon.ln()
}

/// Reference evaluation of `Tr(ρ ln ρ) − Tr(ρ ln σ_ε)` with dense matrices.
///
/// `σ_ε = σ + ε(I − UUᵀ)` is formed explicitly and both logarithms go through
/// full Jacobi eigendecompositions. Intended for tests with small N.
pub fn qre_dense_oracle<T: Scalar>(
    rho_matrix: &DMatrix<T>,
    sigma: &DensitySpectrum<T>,
    epsilon: T,
) -> Result<T> {
    let n = rho_matrix.nrows();
    if n > DENSE_ORACLE_MAX_N {
        return Err(Error::ResourceLimit(format!(
            "dense QRE oracle limited to N <= {DENSE_ORACLE_MAX_N}, got {n}"
        )));
    }
    if rho_matrix.ncols() != n || sigma.ambient_dim() != n {
        return Err(Error::Shape(format!(
            "rho is {}x{}, sigma has N={}",
            n,
            rho_matrix.ncols(),
            sigma.ambient_dim()
        )));
    }
    if !(epsilon > T::zero()) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let tol = T::tol(1e-8);
    let asym = (rho_matrix - rho_matrix.transpose()).amax();
    if asym > tol {
        return Err(Error::Validation(format!("rho is not symmetric ({asym:e})")));
    }
    if (rho_matrix.trace() - T::one()).abs() > tol {
        return Err(Error::Validation(format!(
            "rho has trace {}, expected 1",
            rho_matrix.trace()
        )));
    }
    let (rho_vals, _) = jacobi_eigen(rho_matrix)?;
    if rho_vals[n - 1] < -tol {
        return Err(Error::Validation(format!(
            "rho is not positive semi-definite (eigenvalue {})",
            rho_vals[n - 1]
        )));
    }
    let self_term = rho_vals.iter().fold(T::zero(), |acc, &l| acc + xlnx(l));

    let u = sigma.eigenvectors();
    let null_projector = DMatrix::<T>::identity(n, n) - u * u.transpose();
    let sigma_eps = sigma.to_dense() + null_projector * epsilon;
    let (s_vals, s_vecs) = jacobi_eigen(&sigma_eps)?;
    if s_vals[n - 1] <= T::zero() {
        return Err(Error::Numerical(format!(
            "padded sigma has non-positive eigenvalue {}",
            s_vals[n - 1]
        )));
    }
    let ln_vals = s_vals.map(|v| v.ln());
    let log_sigma = &s_vecs * DMatrix::from_diagonal(&ln_vals) * s_vecs.transpose();
    let cross = rho_matrix.component_mul(&log_sigma).sum();
    Ok(self_term - cross)
}

pub fn encode_feature_vector<T: Scalar>(fv: &FeatureVector<T>) -> Vec<u8> {
    let n = fv.values.len();
    let mut w = ByteWriter::with_capacity(32 + 8 * n);
    w.bytes(FEATURE_MAGIC);
    w.u32(FEATURE_VERSION);
    w.u64(n as u64);
    w.f64(fv.epsilon.as_f64());
    w.f64(fv.qre_total.as_f64());
    for v in &fv.values {
        w.f64(v.as_f64());
    }
    w.into_inner()
}

pub fn decode_feature_vector<T: Scalar>(
    encoder_id: impl Into<String>,
    bytes: &[u8],
) -> Result<FeatureVector<T>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(FEATURE_MAGIC, FEATURE_VERSION)?;
    let n = r.u64()?;
    let epsilon = r.f64()?;
    let total = r.f64()?;
    if n.checked_mul(8) != Some(r.remaining() as u64) {
        return Err(Error::Corruption(format!(
            "header declares N={n} but {} payload bytes follow",
            r.remaining()
        )));
    }
    let values: Vec<T> = (0..n).map(|_| T::lit(r.f64().unwrap())).collect();
    FeatureVector::new(encoder_id, values, T::lit(epsilon), T::lit(total))
}

pub fn write_feature_vector<T: Scalar>(fv: &FeatureVector<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_feature_vector(fv)).map_err(|e| Error::io(path, e))
}

pub fn read_feature_vector<T: Scalar>(path: &Path) -> Result<FeatureVector<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_vector(file_stem(path), &bytes)
}

#[cfg(test)]
mod tests {
    use nalgebra::DVector;

    use super::*;
    use crate::embedding::EmbeddingMatrix;
    use crate::spectral::compute_spectrum;

    fn eps() -> f64 {
        (-12.0f64).exp()
    }

    fn basis_pair() -> DensitySpectrum<f64> {
        let a = EmbeddingMatrix::from_rows(
            "pair",
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]],
        )
        .unwrap();
        compute_spectrum(&a, 1e-12).unwrap()
    }

    #[test]
    fn default_epsilon_constant() {
        assert_eq!(DEFAULT_EPSILON, eps());
    }

    #[test]
    fn self_divergence_is_zero() {
        let s = basis_pair();
        let b = qre(&s, &s, eps()).unwrap();
        assert!(b.total.abs() < 1e-12, "{}", b.total);
        assert!(b.residual_mass.iter().all(|&r| r.abs() < 1e-12));
    }

    #[test]
    fn diagonal_pair_scalar_value() {
        let rho = DensitySpectrum::new(
            "rho",
            DVector::from_vec(vec![0.5, 0.5]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let sigma = DensitySpectrum::new(
            "sigma",
            DVector::from_vec(vec![0.9, 0.1]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let expected = -(2f64.ln()) - 0.5 * (0.9f64.ln() + 0.1f64.ln());
        let b = qre(&rho, &sigma, eps()).unwrap();
        assert!((b.total - expected).abs() < 1e-14);
        assert!((expected - 0.5108).abs() < 1e-3);
    }

    #[test]
    fn unit_base_against_basis_pair() {
        let sigma = basis_pair();
        let base = DensitySpectrum::unit_base(3).unwrap();
        let expected = -(3f64.ln()) - (2.0 / 3.0) * 0.5f64.ln() + 4.0;
        let b = qre(&base, &sigma, eps()).unwrap();
        assert!((b.total - expected).abs() < 1e-12);
        assert!((b.total - b.recompute_total()).abs() < 1e-12);
        assert_eq!(b.captured_mass, vec![1.0, 1.0, 0.0]);

        let fv = feature_vector(&sigma, eps()).unwrap();
        let third = 1.0 / 3.0;
        let want = [
            third * (2.0f64 / 3.0).ln(),
            third * (2.0f64 / 3.0).ln(),
            third * (12.0 - 3f64.ln()),
        ];
        for (a, b) in fv.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((fv.qre_total() - expected).abs() < 1e-12);
        assert!((closed_form_qre_total(&sigma, eps()) - expected).abs() < 1e-12);
        assert!(fv.min_value() < 0.0);
    }

    #[test]
    fn dense_oracle_on_basis_pair() {
        let sigma = basis_pair();
        let rho = DMatrix::<f64>::identity(3, 3) / 3.0;
        let dense = qre_dense_oracle(&rho, &sigma, eps()).unwrap();
        let expected = -(3f64.ln()) - (2.0 / 3.0) * 0.5f64.ln() + 4.0;
        assert!((dense - expected).abs() < 1e-10, "{dense}");
        assert!((expected - 3.3635).abs() < 1e-4);
    }

    #[test]
    fn dense_oracle_self() {
        let sigma = basis_pair();
        let rho = sigma.to_dense();
        assert!(qre_dense_oracle(&rho, &sigma, eps()).unwrap().abs() < 1e-8);
    }

    #[test]
    fn unit_base_features_vanish() {
        let base = DensitySpectrum::<f64>::unit_base(5).unwrap();
        let fv = feature_vector(&base, eps()).unwrap();
        assert!(fv.values().iter().all(|v| v.abs() < 1e-15));
        assert!(fv.qre_total().abs() < 1e-14);
    }

    #[test]
    fn epsilon_range_checked() {
        let sigma = basis_pair();
        assert!(matches!(feature_vector(&sigma, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(feature_vector(&sigma, 0.5), Err(Error::Parameter(_))));
        assert!(matches!(qre(&sigma, &sigma, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn ambient_mismatch_is_shape_error() {
        let a = DensitySpectrum::<f64>::unit_base(2).unwrap();
        let b = DensitySpectrum::<f64>::unit_base(3).unwrap();
        assert!(matches!(qre(&a, &b, eps()), Err(Error::Shape(_))));
    }

    #[test]
    fn dense_oracle_validates_rho() {
        let sigma = basis_pair();
        let bad_trace = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(
            qre_dense_oracle(&bad_trace, &sigma, eps()),
            Err(Error::Validation(_))
        ));
        let mut indefinite = DMatrix::<f64>::zeros(3, 3);
        indefinite[(0, 0)] = 1.5;
        indefinite[(1, 1)] = -0.5;
        assert!(matches!(
            qre_dense_oracle(&indefinite, &sigma, eps()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn feature_binary_round_trip() {
        let fv = feature_vector(&basis_pair(), eps()).unwrap();
        let bytes = encode_feature_vector(&fv);
        assert_eq!(bytes.len(), 32 + 3 * 8);
        let back: FeatureVector<f64> = decode_feature_vector("pair", &bytes).unwrap();
        assert_eq!(back, fv);
        let mut tampered = bytes.clone();
        tampered[24..32].copy_from_slice(&1.0f64.to_le_bytes());
        assert!(matches!(
            decode_feature_vector::<f64>("pair", &tampered),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            decode_feature_vector::<f64>("pair", &bytes[..40]),
            Err(Error::Corruption(_))
        ));
    }
}
