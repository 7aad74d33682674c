//! Rank-tolerant least squares and the mean-squared residual.
//!
//! Columns are equilibrated to unit norm before factorisation and the
//! coefficients mapped back afterwards, so full-rank solutions do not depend
//! on how individual columns happen to be scaled.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{equilibration, scale_columns, svd_solve, triangularize, Triangular};

/// Singular values below this fraction of the largest are treated as zero.
pub const SVD_RELATIVE_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    /// `(1/N) ||Phi xi - U_t||^2`.
    pub residual: f64,
    pub rank: usize,
}

fn check_finite(phi: &DMatrix<f64>, u_t: &DVector<f64>) -> Result<()> {
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression matrix".into()));
    }
    if u_t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression target".into()));
    }
    Ok(())
}

fn check_shapes(phi: &DMatrix<f64>, u_t: &DVector<f64>) -> Result<()> {
    let (n, k) = phi.shape();
    if k == 0 {
        return Err(Error::invalid("least squares with no columns"));
    }
    if n != u_t.len() {
        return Err(Error::invalid(format!("matrix has {n} rows, target has {}", u_t.len())));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "underdetermined system: {n} rows < {k} columns"
        )));
    }
    Ok(())
}

pub fn least_squares(phi: &DMatrix<f64>, u_t: &DVector<f64>) -> Result<FitResult> {
    check_shapes(phi, u_t)?;
    check_finite(phi, u_t)?;
    let scale = equilibration(phi);
    let Triangular { r, qtb } = triangularize(scale_columns(phi, &scale), Some(u_t));
    let (xs, rank) = svd_solve(&r, &qtb, SVD_RELATIVE_CUTOFF);
    let coefficients: Vec<f64> = xs.iter().zip(&scale).map(|(x, s)| x * s).collect();
    let residual = residual(phi, &coefficients, u_t)?;
    Ok(FitResult {
        coefficients,
        residual,
        rank,
    })
}

/// `(1/N) sum_i ((Phi xi)_i - U_t,i)^2`.
pub fn residual(phi: &DMatrix<f64>, xi: &[f64], u_t: &DVector<f64>) -> Result<f64> {
    if phi.ncols() != xi.len() || phi.nrows() != u_t.len() {
        return Err(Error::invalid(format!(
            "shape mismatch: matrix {}x{}, {} coefficients, {} targets",
            phi.nrows(),
            phi.ncols(),
            xi.len(),
            u_t.len()
        )));
    }
    Ok(residual_of_columns(phi, None, xi, u_t))
}

/// Residual of the fit that uses `columns` of `phi` (all columns when `None`).
pub(crate) fn residual_of_columns(
    phi: &DMatrix<f64>,
    columns: Option<&[usize]>,
    xi: &[f64],
    u_t: &DVector<f64>,
) -> f64 {
    let n = phi.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut r: Vec<f64> = u_t.iter().map(|v| -v).collect();
    let mut add = |j: usize, c: f64| {
        for (ri, p) in r.iter_mut().zip(phi.column(j).iter()) {
            *ri += c * p;
        }
    };
    match columns {
        Some(cols) => cols.iter().zip(xi).for_each(|(&j, &c)| add(j, c)),
        None => xi.iter().enumerate().for_each(|(j, &c)| add(j, c)),
    }
    r.iter().map(|v| v * v).sum::<f64>() / n as f64
}

/// A regression problem factorised once so that fits on column subsets cost
/// only a small dense solve.
///
/// With `D Phi = Q R`, every subset fit `min ||Phi_S xi - U_t||` equals
/// `min ||R_S (D xi) - Q^T U_t||` up to a constant, so each subset reuses
/// `R` and `Q^T U_t`. Residuals are always recomputed from `Phi` itself.
#[derive(Debug, Clone)]
pub struct LeastSquaresSystem<'a> {
    phi: &'a DMatrix<f64>,
    target: &'a DVector<f64>,
    scale: Vec<f64>,
    r: DMatrix<f64>,
    qtb: DVector<f64>,
}

impl<'a> LeastSquaresSystem<'a> {
    pub fn new(phi: &'a DMatrix<f64>, target: &'a DVector<f64>) -> Result<Self> {
        check_shapes(phi, target)?;
        check_finite(phi, target)?;
        let scale = equilibration(phi);
        let Triangular { r, qtb } = triangularize(scale_columns(phi, &scale), Some(target));
        Ok(Self {
            phi,
            target,
            scale,
            r,
            qtb,
        })
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        self.phi
    }

    pub fn target(&self) -> &DVector<f64> {
        self.target
    }

    pub fn solve(&self, columns: &[usize]) -> Result<FitResult> {
        if columns.is_empty() {
            return Err(Error::invalid("least squares with no columns"));
        }
        let rs = self.r.select_columns(columns);
        let (xs, rank) = svd_solve(&rs, &self.qtb, SVD_RELATIVE_CUTOFF);
        let coefficients: Vec<f64> = xs.iter().zip(columns).map(|(x, &j)| x * self.scale[j]).collect();
        let residual = residual_of_columns(self.phi, Some(columns), &coefficients, self.target);
        Ok(FitResult {
            coefficients,
            residual,
            rank,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system() {
        let phi = DMatrix::identity(4, 4);
        let u = DVector::from_vec(vec![1.0, -2.0, 3.5, 0.25]);
        let fit = least_squares(&phi, &u).unwrap();
        for (a, b) in fit.coefficients.iter().zip(u.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(fit.residual < 1e-28);
        assert_eq!(fit.rank, 4);
    }

    #[test]
    fn mean_of_two_points() {
        let phi = DMatrix::from_element(2, 1, 1.0);
        let u = DVector::from_vec(vec![1.0, 3.0]);
        let fit = least_squares(&phi, &u).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-14);
        assert!((fit.residual - 1.0).abs() < 1e-14);
        assert_eq!(residual(&phi, &[2.0], &u).unwrap(), 1.0);
    }

    #[test]
    fn exact_solution_has_zero_residual() {
        let phi = DMatrix::from_fn(10, 3, |i, j| ((i + 1) as f64).powi(j as i32));
        let xi = [0.5, -1.0, 2.0];
        let u = &phi * DVector::from_row_slice(&xi);
        assert!(residual(&phi, &xi, &u).unwrap() < 1e-24);
    }

    #[test]
    fn rejects_bad_input() {
        let u = DVector::from_vec(vec![1.0, 2.0]);
        assert!(least_squares(&DMatrix::zeros(2, 0), &u).is_err());
        assert!(least_squares(&DMatrix::zeros(2, 3), &u).is_err());
        let mut phi = DMatrix::from_element(2, 1, 1.0);
        phi[(1, 0)] = f64::INFINITY;
        assert!(matches!(least_squares(&phi, &u), Err(Error::NonFinite(_))));
        assert!(residual(&DMatrix::zeros(3, 1), &[1.0], &u).is_err());
    }

    #[test]
    fn rank_deficient_min_norm() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let u = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let fit = least_squares(&phi, &u).unwrap();
        assert_eq!(fit.rank, 1);
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_column_gets_zero_coefficient() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let fit = least_squares(&phi, &u).unwrap();
        assert_eq!(fit.coefficients[1], 0.0);
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn subset_solves_match_direct_fits() {
        let phi = DMatrix::from_fn(60, 6, |i, j| {
            ((i * (j + 2)) as f64 * 0.13).sin() * (j as f64 + 1.0).powi(3)
        });
        let u = DVector::from_fn(60, |i, _| (i as f64 * 0.05).cos());
        let sys = LeastSquaresSystem::new(&phi, &u).unwrap();
        for cols in [vec![0, 1, 2, 3, 4, 5], vec![1, 3, 4], vec![5], vec![0, 2]] {
            let a = sys.solve(&cols).unwrap();
            let b = least_squares(&phi.select_columns(&cols), &u).unwrap();
            for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
                assert!((x - y).abs() <= 1e-10 * y.abs().max(1e-3), "{cols:?}: {x} vs {y}");
            }
            assert!((a.residual - b.residual).abs() <= 1e-10 * b.residual.max(1e-20));
        }
    }
}
