//! Dense linear-algebra helpers.
//!
//! The production spectrum path goes through nalgebra's bidiagonal SVD. The
//! dense oracles use the cyclic Jacobi eigensolver below, so the two paths
//! share no decomposition code.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const SVD_MAX_ITER: usize = 10_000;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Economy SVD returning `(U, s)` with `U` of shape N×min(N,d) and singular
/// values sorted in descending order. The right factor is not computed.
pub fn thin_svd_left<T: Scalar>(a: &DMatrix<T>) -> Result<(DMatrix<T>, DVector<T>)> {
    let (n, d) = a.shape();
    let svd = SVD::try_new(a.clone(), true, false, T::machine_eps(), SVD_MAX_ITER).ok_or_else(
        || {
            Error::Numerical(format!(
                "SVD did not converge within {SVD_MAX_ITER} iterations on a {n}x{d} matrix \
                 (max |a| = {})",
                a.amax()
            ))
        },
    )?;
    let u = svd.u.expect("left factor requested");
    let order = descending_order(svd.singular_values.as_slice());
    let s = DVector::from_iterator(order.len(), order.iter().map(|&i| svd.singular_values[i]));
    let u = u.select_columns(&order);
    Ok((u, s))
}

/// Economy SVD returning `(s, Vᵀ)` with rows of `Vᵀ` sorted by descending
/// singular value.
pub fn thin_svd_right<T: Scalar>(a: &DMatrix<T>) -> Result<(DVector<T>, DMatrix<T>)> {
    let (n, d) = a.shape();
    let svd = SVD::try_new(a.clone(), false, true, T::machine_eps(), SVD_MAX_ITER).ok_or_else(
        || Error::Numerical(format!("SVD did not converge on a {n}x{d} matrix")),
    )?;
    let v_t = svd.v_t.expect("right factor requested");
    let order = descending_order(svd.singular_values.as_slice());
    let s = DVector::from_iterator(order.len(), order.iter().map(|&i| svd.singular_values[i]));
    Ok((s, v_t.select_rows(&order)))
}

fn descending_order<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable: equal values keep their original relative order
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).expect("finite singular values"));
    order
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching orthonormal
/// eigenvectors as columns. Only the symmetric part of `a` is used.
pub fn jacobi_eigen<T: Scalar>(a: &DMatrix<T>) -> Result<(DVector<T>, DMatrix<T>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Shape(format!("{}x{} is not square", n, a.ncols())));
    }
    let mut m = (a + a.transpose()) * T::lit(0.5);
    let mut v = DMatrix::<T>::identity(n, n);
    let scale = m.norm();
    if scale == T::zero() {
        return Ok((DVector::zeros(n), v));
    }
    let eps = T::machine_eps();
    let mut converged = false;
    for sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = T::zero();
        for q in 0..n {
            for p in 0..q {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= eps * eps.sqrt() * scale {
            converged = true;
            break;
        }
        for q in 1..n {
            for p in 0..q {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                // skip rotations that cannot change the diagonal at working precision
                if apq.abs() <= eps * T::lit(1e-3) * (app.abs() + aqq.abs()) && sweep > 3 {
                    m[(p, q)] = T::zero();
                    m[(q, p)] = T::zero();
                    continue;
                }
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = {
                    let denom = theta.abs() + (theta * theta + T::one()).sqrt();
                    if theta >= T::zero() {
                        T::one() / denom
                    } else {
                        -T::one() / denom
                    }
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = T::zero();
                m[(q, p)] = T::zero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps (n = {n})"
        )));
    }
    let diag: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
    let order = descending_order(&diag);
    let values = DVector::from_iterator(n, order.iter().map(|&i| diag[i]));
    Ok((values, v.select_columns(&order)))
}

/// Flips each column so that its largest-magnitude entry is positive. Ties go
/// to the lowest row index.
pub fn canonicalize_signs<T: Scalar>(columns: &mut DMatrix<T>) {
    for mut col in columns.column_iter_mut() {
        let mut best = 0;
        let mut best_abs = T::zero();
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col[best] < T::zero() {
            col.neg_mut();
        }
    }
}

/// Largest entry of `|QᵀQ − I|` for a matrix with orthonormal columns.
pub fn orthonormality_defect<T: Scalar>(q: &DMatrix<T>) -> T {
    let gram = q.tr_mul(q);
    let mut worst = T::zero();
    for j in 0..gram.ncols() {
        for i in 0..gram.nrows() {
            let target = if i == j { T::one() } else { T::zero() };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Sine of the largest principal angle between the column spans of two
/// matrices with orthonormal columns, bounded above by the Frobenius norm of
/// the residual `(I − BBᵀ)A`. Returns 1 when dimensions differ.
pub fn subspace_distance<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    if a.shape() != b.shape() {
        return T::one();
    }
    let proj = b * b.tr_mul(a);
    let resid_ab = (a - proj).norm();
    let proj = a * a.tr_mul(b);
    let resid_ba = (b - proj).norm();
    resid_ab.max(resid_ba)
}
