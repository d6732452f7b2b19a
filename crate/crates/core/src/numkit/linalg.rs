//! Dense linear algebra with explicit rank tolerances.
//!
//! All rank decisions are made relative to the largest singular value:
//! a singular value sigma counts as zero when sigma <= tol * sigma_max.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default relative singular-value tolerance for rank decisions.
///
/// Double-precision SVD noise sits around 1e-14 * sigma_max for the matrix
/// sizes used here; 1e-9 leaves a wide safety margin while still resolving
/// genuinely tiny singular values.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

fn ensure_finite(m: &DMatrix<f64>, context: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
        })
    }
}

fn ensure_tol(tol: f64, context: &str) -> Result<()> {
    if tol > 0.0 && tol < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument {
            context: context.to_string(),
            reason: format!("tolerance {tol} not in (0, 1)"),
        })
    }
}

/// Moore-Penrose pseudoinverse.
///
/// Singular values sigma <= tol * sigma_max are treated as zero. The result
/// satisfies the four Penrose identities to numerical precision.
///
/// The subspaces come from a complete orthogonal decomposition (a pivoted QR
/// followed by a plain QR of the retained triangle), not from the SVD: the
/// SVD backend can return singular vectors tilted by ~1e-6 when several
/// singular values vanish, while Householder factorizations stay accurate
/// to machine precision. Only the rank decision uses singular values.
pub fn pinv(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    ensure_finite(m, "pinv input")?;
    ensure_tol(tol, "pinv")?;
    let (rows, cols) = m.shape();
    let rank = rank_of(m, tol)?;
    if rank == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }

    // Normalizing the scale first keeps the Householder reflections alive
    // for matrices whose squared entries would underflow (e.g. inputs
    // multiplied by a fully decayed reliability signal ~1e-300).
    let scale = m.norm();
    let scaled = m / scale;

    // scaled * P = Q1 * R; discarding rows of R past the rank truncates
    // exactly the singular directions the tolerance declared zero.
    let qr = scaled.col_piv_qr();
    let q1 = qr.q().columns(0, rank).into_owned();
    let r1 = qr.r().rows(0, rank).into_owned();

    // R1^T = Q2 * R2 with R2 invertible, so pinv(R1) = Q2 * R2^{-T}.
    let qr2 = r1.transpose().qr();
    let q2 = qr2.q();
    let y = qr2
        .r()
        .transpose()
        .solve_lower_triangular(&q1.transpose())
        .ok_or_else(|| Error::InvalidArgument {
            context: "pinv".to_string(),
            reason: "rank decision inconsistent with the QR factorization".to_string(),
        })?;
    let mut out = q2 * y / scale;
    qr.p().inv_permute_rows(&mut out);
    Ok(out)
}

/// Numerical rank: the number of singular values above tol * sigma_max.
///
/// The zero matrix has rank 0.
pub fn rank_of(m: &DMatrix<f64>, tol: f64) -> Result<usize> {
    ensure_finite(m, "rank_of input")?;
    ensure_tol(tol, "rank_of")?;
    let sigma = m.clone().singular_values();
    let sigma_max = sigma.iter().cloned().fold(0.0_f64, f64::max);
    if sigma_max == 0.0 {
        return Ok(0);
    }
    let cutoff = tol * sigma_max;
    Ok(sigma.iter().filter(|&&s| s > cutoff).count())
}

/// Orthonormal basis of the kernel of `m`, one column per kernel direction.
///
/// The kernel dimension is ncols - rank (rank decided by singular values).
/// A pivoted QR of m^T yields an orthonormal row-space basis; a second
/// Householder QR of that basis augmented with the identity completes it to
/// an orthonormal basis of the full space, and the trailing columns are the
/// kernel. Each column's sign is normalized so that its largest-magnitude
/// entry is positive, which makes the basis deterministic (it is otherwise
/// only determined up to sign).
pub fn nullspace_basis(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    ensure_finite(m, "nullspace_basis input")?;
    ensure_tol(tol, "nullspace_basis")?;
    let cols = m.ncols();
    let rank = rank_of(m, tol)?;
    let total = cols - rank;
    if total == 0 {
        return Ok(DMatrix::zeros(cols, 0));
    }
    if rank == 0 {
        // Every direction is in the kernel; the identity is already an
        // orthonormal, sign-normalized basis.
        return Ok(DMatrix::identity(cols, cols));
    }

    // The first `rank` thin-Q columns of a pivoted QR of m^T span the row
    // space. Normalizing the scale keeps the reflections alive for matrices
    // whose squared entries would underflow; the kernel is scale invariant.
    let qt = (m.transpose() / m.norm()).col_piv_qr().q();
    let row_space = qt.columns(0, rank).into_owned();

    // Householder QR of [row_space | I] extends the row-space basis to an
    // orthonormal basis of the whole space; the trailing columns are the
    // kernel, orthogonal to the row space at machine precision.
    let mut augmented = DMatrix::zeros(cols, rank + cols);
    augmented.view_mut((0, 0), (cols, rank)).copy_from(&row_space);
    for j in 0..cols {
        augmented[(j, rank + j)] = 1.0;
    }
    let q_full = augmented.qr().q();
    let kernel = q_full.columns(rank, total).into_owned();

    let mut out = DMatrix::zeros(cols, total);
    for (j, col) in kernel.column_iter().enumerate() {
        // Deterministic sign: largest-magnitude entry made positive.
        let mut pivot = 0;
        for i in 0..cols {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        out.set_column(j, &(col * sign));
    }
    Ok(out)
}

/// Smallest eigenvalue of M + M^T (twice the symmetric part).
///
/// This is the quantity bounded below in definiteness conditions of the form
/// M + M^T >= alpha * I.
pub fn min_sym_eig(m: &DMatrix<f64>) -> Result<f64> {
    ensure_finite(m, "min_sym_eig input")?;
    if !m.is_square() {
        return Err(Error::dimension(
            "min_sym_eig",
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    let sym = m + m.transpose();
    let eig = nalgebra::SymmetricEigen::new(sym);
    Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, DMatrix};

    #[test]
    fn pinv_scalar_inverse() {
        let m = dmatrix![2.0];
        let p = pinv(&m, DEFAULT_RANK_TOL).unwrap();
        assert_relative_eq!(p[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn pinv_idempotent_projector() {
        let m = dmatrix![1.0, 0.0; 0.0, 0.0];
        let p = pinv(&m, DEFAULT_RANK_TOL).unwrap();
        assert_relative_eq!((p - m).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let m = dmatrix![f64::NAN];
        assert!(matches!(
            pinv(&m, DEFAULT_RANK_TOL),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn pinv_rejects_bad_tolerance() {
        let m = dmatrix![1.0];
        assert!(pinv(&m, 0.0).is_err());
        assert!(pinv(&m, 1.0).is_err());
    }

    #[test]
    fn pinv_penrose_identities_on_rank_deficient_matrix() {
        // 4x3 of rank 2.
        let m = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 2.0, 3.0, //
                2.0, 4.0, 6.0, //
                0.5, 1.0, 2.0, //
                1.5, 3.0, 5.0,
            ],
        );
        let p = pinv(&m, DEFAULT_RANK_TOL).unwrap();
        assert_relative_eq!((&m * &p * &m - &m).norm(), 0.0, epsilon = 1e-10);
        assert_relative_eq!((&p * &m * &p - &p).norm(), 0.0, epsilon = 1e-10);
        let mp = &m * &p;
        let pm = &p * &m;
        assert_relative_eq!((&mp - mp.transpose()).norm(), 0.0, epsilon = 1e-10);
        assert_relative_eq!((&pm - pm.transpose()).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn rank_identity_and_zero() {
        assert_eq!(rank_of(&DMatrix::identity(3, 3), DEFAULT_RANK_TOL).unwrap(), 3);
        assert_eq!(rank_of(&DMatrix::zeros(2, 4), DEFAULT_RANK_TOL).unwrap(), 0);
    }

    #[test]
    fn nullspace_of_row_vector() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let v = nullspace_basis(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(v.shape(), (2, 1));
        assert_relative_eq!(v[(0, 0)], 0.0, epsilon = 1e-14);
        // Sign convention: largest entry positive.
        assert_relative_eq!(v[(1, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn nullspace_of_full_column_rank_is_empty() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let v = nullspace_basis(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(v.shape(), (2, 0));
    }

    #[test]
    fn nullspace_of_wide_zero_rows() {
        // 1x3 zero matrix: kernel is all of R^3; needs orthogonal completion.
        let m = DMatrix::zeros(1, 3);
        let v = nullspace_basis(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(v.shape(), (3, 3));
        assert_relative_eq!((v.transpose() * &v - DMatrix::identity(3, 3)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn nullspace_columns_plus_rank_equals_cols() {
        let m = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 1.0, 2.0, 4.0, 0.0, 2.0]);
        let r = rank_of(&m, DEFAULT_RANK_TOL).unwrap();
        let v = nullspace_basis(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r + v.ncols(), 4);
        assert_relative_eq!((&m * &v).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn min_sym_eig_identity_and_skew() {
        assert_relative_eq!(min_sym_eig(&DMatrix::identity(2, 2)).unwrap(), 2.0, epsilon = 1e-14);
        let skew = dmatrix![0.0, 1.0; -1.0, 0.0];
        assert_relative_eq!(min_sym_eig(&skew).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn min_sym_eig_rejects_rectangular() {
        let m = DMatrix::zeros(2, 3);
        assert!(min_sym_eig(&m).is_err());
    }
}
