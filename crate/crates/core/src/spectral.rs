//! Density spectra of embedding matrices.
//!
//! The density matrix of an encoder is its PIP matrix `G = AAᵀ` divided by its
//! trace. Its eigenvalues are the squared singular values of `A` divided by
//! their sum, and its eigenvectors are the left singular vectors of `A`, so the
//! N×N matrix is never formed on the fast path.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::binfmt::{ByteReader, ByteWriter};
use crate::embedding::{file_stem, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::linalg::{canonicalize_signs, jacobi_eigen, orthonormality_defect, thin_svd_left};
use crate::scalar::{xlnx, Scalar};

pub const SPECTRUM_MAGIC: &[u8; 4] = b"ESPC";
pub const SPECTRUM_VERSION: u32 = 1;

pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-12;
/// Largest N accepted by [`explicit_spectrum_oracle`].
pub const ORACLE_MAX_N: usize = 2048;
/// Eigenvalues at or below this are dropped by the dense oracle.
pub const ORACLE_EIGEN_FLOOR: f64 = 1e-12;

const TRACE_TOLERANCE: f64 = 1e-10;
const ORTHONORMAL_TOLERANCE: f64 = 1e-8;

/// Retained eigenpairs of a trace-normalized PIP matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySpectrum<T: Scalar> {
    encoder_id: String,
    eigenvalues: DVector<T>,
    /// N×K, column k pairs with `eigenvalues[k]`.
    eigenvectors: DMatrix<T>,
}

impl<T: Scalar> DensitySpectrum<T> {
    /// Validates and wraps eigenpairs whose eigenvalues must sum to one.
    pub fn new(
        encoder_id: impl Into<String>,
        eigenvalues: DVector<T>,
        eigenvectors: DMatrix<T>,
    ) -> Result<Self> {
        Self::with_mass_slack(encoder_id, eigenvalues, eigenvectors, T::zero())
    }

    /// Like [`DensitySpectrum::new`] but tolerates `slack` of discarded mass
    /// below one, as left behind by a rank cutoff.
    pub fn with_mass_slack(
        encoder_id: impl Into<String>,
        eigenvalues: DVector<T>,
        eigenvectors: DMatrix<T>,
        slack: T,
    ) -> Result<Self> {
        let s = DensitySpectrum {
            encoder_id: encoder_id.into(),
            eigenvalues,
            eigenvectors,
        };
        s.validate(slack)?;
        Ok(s)
    }

    fn validate(&self, slack: T) -> Result<()> {
        let k = self.eigenvalues.len();
        if self.eigenvectors.ncols() != k {
            return Err(Error::Shape(format!(
                "{} eigenvalues but {} eigenvector columns",
                k,
                self.eigenvectors.ncols()
            )));
        }
        if k == 0 || k > self.ambient_dim() {
            return Err(Error::Validation(format!(
                "rank {k} outside [1, {}]",
                self.ambient_dim()
            )));
        }
        if self
            .eigenvalues
            .iter()
            .chain(self.eigenvectors.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Validation("non-finite spectrum entry".into()));
        }
        for (i, w) in self.eigenvalues.as_slice().windows(2).enumerate() {
            if w[1] > w[0] {
                return Err(Error::Validation(format!(
                    "eigenvalues increase at index {}",
                    i + 1
                )));
            }
        }
        if self.eigenvalues[k - 1] < T::zero() {
            return Err(Error::Validation("negative eigenvalue".into()));
        }
        let tol = T::tol(TRACE_TOLERANCE);
        let sum = self.trace();
        if sum > T::one() + tol || sum < T::one() - tol - slack {
            return Err(Error::Validation(format!(
                "eigenvalues sum to {sum}, expected 1"
            )));
        }
        let defect = orthonormality_defect(&self.eigenvectors);
        if defect > T::tol(ORTHONORMAL_TOLERANCE) {
            return Err(Error::Validation(format!(
                "eigenvectors are not orthonormal (max |UᵀU - I| = {defect:e})"
            )));
        }
        Ok(())
    }

    /// Spectrum of the unit base encoder, `(1/N)·I`. Allocates N×N.
    pub fn unit_base(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("unit base needs N >= 1".into()));
        }
        let lambda = T::one() / T::from_usize_lossy(n);
        Self::new(
            "unit-base",
            DVector::from_element(n, lambda),
            DMatrix::identity(n, n),
        )
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn set_encoder_id(&mut self, id: impl Into<String>) {
        self.encoder_id = id.into();
    }

    /// N, the number of sentences.
    pub fn ambient_dim(&self) -> usize {
        self.eigenvectors.nrows()
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &DVector<T> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<T> {
        &self.eigenvectors
    }

    pub fn trace(&self) -> T {
        self.eigenvalues.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues[self.rank() - 1]
    }

    /// Materializes `Σ λ v vᵀ` as a dense N×N matrix.
    pub fn to_dense(&self) -> DMatrix<T> {
        let scaled = &self.eigenvectors * DMatrix::from_diagonal(&self.eigenvalues);
        scaled * self.eigenvectors.transpose()
    }
}

/// Spectrum of the density matrix of `matrix` via its thin SVD.
///
/// Eigenvalues with normalized value `<= rank_tolerance` are dropped; the
/// retained values are not renormalized.
pub fn compute_spectrum<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    rank_tolerance: T,
) -> Result<DensitySpectrum<T>> {
    if !(rank_tolerance >= T::zero()) || !rank_tolerance.is_finite() {
        return Err(Error::Parameter(format!(
            "rank tolerance must be finite and >= 0, got {rank_tolerance}"
        )));
    }
    let a = matrix.matrix();
    if a.iter().all(|v| *v == T::zero()) {
        return Err(Error::DegenerateInput(format!(
            "embedding matrix of {} is all zeros",
            matrix.encoder_id()
        )));
    }
    let (u, s) = thin_svd_left(a)?;
    let squares: Vec<T> = s.iter().map(|&v| v * v).collect();
    // ascending summation order for accuracy
    let total = squares.iter().rev().fold(T::zero(), |acc, &v| acc + v);
    let keep: Vec<usize> = squares
        .iter()
        .enumerate()
        .filter(|(_, &sq)| sq / total > rank_tolerance)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "no eigenvalue of {} exceeds rank tolerance {rank_tolerance}",
            matrix.encoder_id()
        )));
    }
    let eigenvalues = DVector::from_iterator(keep.len(), keep.iter().map(|&i| squares[i] / total));
    let mut eigenvectors = u.select_columns(&keep);
    canonicalize_signs(&mut eigenvectors);
    let slack = rank_tolerance * T::from_usize_lossy(squares.len());
    DensitySpectrum::with_mass_slack(
        matrix.encoder_id().to_string(),
        eigenvalues,
        eigenvectors,
        slack,
    )
}

/// Dense reference path: forms `G = AAᵀ`, divides by its trace and runs a
/// Jacobi eigendecomposition. Keeps eigenvalues above [`ORACLE_EIGEN_FLOOR`].
pub fn explicit_spectrum_oracle<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
) -> Result<DensitySpectrum<T>> {
    explicit_spectrum_oracle_capped(matrix, ORACLE_MAX_N)
}

pub fn explicit_spectrum_oracle_capped<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    max_n: usize,
) -> Result<DensitySpectrum<T>> {
    let n = matrix.n_rows();
    if n > max_n {
        return Err(Error::ResourceLimit(format!(
            "dense oracle limited to N <= {max_n}, got {n}"
        )));
    }
    let a = matrix.matrix();
    let g = a * a.transpose();
    let trace = g.trace();
    if trace == T::zero() {
        return Err(Error::DegenerateInput(format!(
            "embedding matrix of {} is all zeros",
            matrix.encoder_id()
        )));
    }
    let rho = g / trace;
    let (values, vectors) = jacobi_eigen(&rho)?;
    let floor = T::lit(ORACLE_EIGEN_FLOOR);
    let keep: Vec<usize> = (0..n).filter(|&i| values[i] > floor).collect();
    let eigenvalues = DVector::from_iterator(keep.len(), keep.iter().map(|&i| values[i]));
    let mut eigenvectors = vectors.select_columns(&keep);
    canonicalize_signs(&mut eigenvectors);
    DensitySpectrum::with_mass_slack(
        matrix.encoder_id().to_string(),
        eigenvalues,
        eigenvectors,
        floor * T::from_usize_lossy(n),
    )
}

/// Von Neumann entropy `−Σ λ ln λ`, with `0 ln 0 = 0`.
pub fn von_neumann_entropy<T: Scalar>(spectrum: &DensitySpectrum<T>) -> T {
    -spectrum
        .eigenvalues
        .iter()
        .fold(T::zero(), |acc, &l| acc + xlnx(l))
}

pub fn encode_spectrum<T: Scalar>(spectrum: &DensitySpectrum<T>) -> Vec<u8> {
    let n = spectrum.ambient_dim();
    let k = spectrum.rank();
    let mut w = ByteWriter::with_capacity(24 + 8 * k * (n + 1));
    w.bytes(SPECTRUM_MAGIC);
    w.u32(SPECTRUM_VERSION);
    w.u64(n as u64);
    w.u64(k as u64);
    for v in spectrum.eigenvalues.iter() {
        w.f64(v.as_f64());
    }
    // nalgebra storage is column-major already
    for v in spectrum.eigenvectors.iter() {
        w.f64(v.as_f64());
    }
    w.into_inner()
}

pub fn decode_spectrum<T: Scalar>(
    encoder_id: impl Into<String>,
    bytes: &[u8],
    mass_slack: T,
) -> Result<DensitySpectrum<T>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(SPECTRUM_MAGIC, SPECTRUM_VERSION)?;
    let n = r.u64()?;
    let k = r.u64()?;
    let expected = k
        .checked_mul(n.saturating_add(1))
        .and_then(|c| c.checked_mul(8));
    if expected != Some(r.remaining() as u64) {
        return Err(Error::Corruption(format!(
            "header declares N={n}, K={k} but {} payload bytes follow",
            r.remaining()
        )));
    }
    let (n, k) = (n as usize, k as usize);
    let eigenvalues = DVector::from_iterator(k, (0..k).map(|_| T::lit(r.f64().unwrap())));
    let entries: Vec<T> = (0..n * k).map(|_| T::lit(r.f64().unwrap())).collect();
    let eigenvectors = DMatrix::from_column_slice(n, k, &entries);
    DensitySpectrum::with_mass_slack(encoder_id, eigenvalues, eigenvectors, mass_slack)
}

pub fn write_spectrum<T: Scalar>(spectrum: &DensitySpectrum<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_spectrum(spectrum)).map_err(|e| Error::io(path, e))
}

/// Reads an `ESPC` file; `rank_tolerance` bounds the missing trace mass.
pub fn read_spectrum<T: Scalar>(path: &Path, rank_tolerance: T) -> Result<DensitySpectrum<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n = bytes
        .get(8..16)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize)
        .unwrap_or(0);
    decode_spectrum(
        file_stem(path),
        &bytes,
        rank_tolerance * T::from_usize_lossy(n),
    )
}
