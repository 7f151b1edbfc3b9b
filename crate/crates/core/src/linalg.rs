//! Dense least squares through Householder QR.
//!
//! Solves `min_X || B - A X ||_F` for tall `A` without forming the normal
//! equations. Rank deficiency is detected from the reflector norms.

use crate::mat::{axpy, Mat};
use crate::scalar::Scalar;

/// Failure modes of the least-squares solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LstsqError {
    /// More unknown columns than equations.
    Underdetermined,
    /// `A` does not have full column rank.
    RankDeficient,
}

/// Least-squares solution of `A X = B` for `A` of size `m x n`, `m >= n`.
///
/// Returns the `n x rhs_cols` minimizer. `A` and `B` must have the same
/// number of rows.
#[allow(clippy::needless_range_loop)] // the factorization indexes two arrays in lockstep
pub fn lstsq<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Result<Mat<T>, LstsqError> {
    let (m, n) = (a.rows(), a.cols());
    assert_eq!(m, b.rows(), "coefficient and rhs row counts must agree");
    if n > m {
        return Err(LstsqError::Underdetermined);
    }
    if n == 0 {
        return Ok(Mat::zeros(0, b.cols()));
    }

    let mut qr = a.clone();
    let mut rhs = b.clone();

    // Rank tolerance scaled by the largest column norm of A.
    let max_col_norm = (0..n)
        .map(|j| {
            (0..m)
                .map(|i| qr[(i, j)] * qr[(i, j)])
                .fold(T::zero(), |acc, x| acc + x)
                .sqrt()
        })
        .fold(T::zero(), |acc, x| acc.max(x));
    let tol = T::epsilon() * T::from_count(m.max(n)) * max_col_norm;

    let mut reflector = vec![T::zero(); m];
    for k in 0..n {
        // Householder vector for column k below the diagonal.
        let mut norm_sq = T::zero();
        for i in k..m {
            let x = qr[(i, k)];
            norm_sq += x * x;
        }
        let norm = norm_sq.sqrt();
        if norm <= tol {
            return Err(LstsqError::RankDeficient);
        }
        let pivot = qr[(k, k)];
        let alpha = if pivot >= T::zero() { -norm } else { norm };
        reflector[k] = pivot - alpha;
        for i in (k + 1)..m {
            reflector[i] = qr[(i, k)];
        }
        let v_norm_sq = {
            let head = reflector[k];
            norm_sq - pivot * pivot + head * head
        };
        if v_norm_sq > T::zero() {
            let scale = (T::one() + T::one()) / v_norm_sq;
            // Apply I - scale * v v^T to the trailing columns of qr.
            for j in (k + 1)..n {
                let mut dot = T::zero();
                for i in k..m {
                    dot += reflector[i] * qr[(i, j)];
                }
                let factor = scale * dot;
                for i in k..m {
                    qr[(i, j)] -= factor * reflector[i];
                }
            }
            // And to every right-hand side, row-major friendly.
            let mut work = vec![T::zero(); rhs.cols()];
            for i in k..m {
                axpy(reflector[i], rhs.row(i), &mut work);
            }
            for i in k..m {
                let factor = scale * reflector[i];
                for (r, w) in rhs.row_mut(i).iter_mut().zip(&work) {
                    *r -= factor * *w;
                }
            }
        }
        qr[(k, k)] = alpha;
        if alpha.abs() <= tol {
            return Err(LstsqError::RankDeficient);
        }
    }

    // Back substitution on the leading n rows of the transformed rhs.
    let mut x = Mat::zeros(n, b.cols());
    for i in (0..n).rev() {
        let mut row = rhs.row(i).to_vec();
        for k in (i + 1)..n {
            let r = qr[(i, k)];
            let xk = x.row(k);
            for (acc, &v) in row.iter_mut().zip(xk) {
                *acc -= r * v;
            }
        }
        let inv = T::one() / qr[(i, i)];
        for (dst, v) in x.row_mut(i).iter_mut().zip(&row) {
            *dst = inv * *v;
        }
    }
    Ok(x)
}
