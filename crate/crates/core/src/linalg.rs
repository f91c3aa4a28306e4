//! Dense symmetric solves shared by the ridge and linear-hypothesis fits.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// How a symmetric system was solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveRoute {
    Cholesky,
    PseudoInverse,
}

/// Solves `A X = B` for symmetric positive semidefinite `A`.
///
/// Cholesky first; if that fails (or leaves a residual above the bound),
/// falls back to an SVD pseudo-inverse truncating singular values below
/// `1e-12·σ_max`. The returned solution satisfies
/// `‖A X − B‖_F ≤ 1e-8·(‖B‖_F + 1)` or an error is raised.
pub fn solve_symmetric(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, SolveRoute)> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            context: "solve_symmetric",
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    let bound = 1e-8 * (b.norm() + 1.0);
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) && (a * &x - b).norm() <= bound {
            return Ok((x, SolveRoute::Cholesky));
        }
    }
    let x = pseudo_inverse_solve(a, b)?;
    let resid = (a * &x - b).norm();
    if resid <= bound {
        return Ok((x, SolveRoute::PseudoInverse));
    }
    // A singular system whose right-hand side is outside the range has no
    // exact solution; the minimum-norm least-squares one is accepted only
    // when B lies in the numerical range of A.
    let sv = a.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    Err(Error::Numerical(format!(
        "symmetric solve failed: residual {resid:e} > {bound:e}, singular values in [{smin:e}, {smax:e}]"
    )))
}

/// Minimum-norm solution via truncated SVD (cut at `1e-12·σ_max`).
pub fn pseudo_inverse_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = 1e-12 * smax;
    let pinv = svd
        .pseudo_inverse(cut)
        .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))?;
    Ok(pinv * b)
}

pub fn solve_symmetric_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, SolveRoute)> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let (x, route) = solve_symmetric(a, &bm)?;
    Ok((DVector::from_column_slice(x.as_slice()), route))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone().symmetric_eigenvalues().min()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_route_for_spd() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let (x, route) = solve_symmetric(&a, &b).unwrap();
        assert_eq!(route, SolveRoute::Cholesky);
        assert!((&a * &x - &b).norm() < 1e-14);
    }

    #[test]
    fn pinv_route_gives_minimum_norm() {
        // Rank-one A; x = (0.5, 0.5) is the minimum-norm solution of x1 + x2 = 1.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let (x, route) = solve_symmetric(&a, &b).unwrap();
        assert_eq!(route, SolveRoute::PseudoInverse);
        assert!((x[0] - 0.5).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_singular_system_errors() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(solve_symmetric(&a, &b), Err(Error::Numerical(_))));
    }
}
