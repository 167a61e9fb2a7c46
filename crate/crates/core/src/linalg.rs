//! Dense LU solve with one round of iterative refinement.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Residual bound for accepted solves, relative to `max(1, |b|_inf)`.
pub const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    pub residual: f64,
}

pub(crate) fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solves `a x = b` with partial pivoting, then refines once.
pub(crate) fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Solution> {
    if a.nrows() == 0 {
        return Ok(Solution {
            x: DVector::zeros(0),
            residual: 0.0,
        });
    }
    let lu = a.clone().lu();
    let mut x = lu.solve(b).ok_or(Error::SolverFailure {
        residual: f64::INFINITY,
    })?;
    let r = b - a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    let residual = inf_norm(&(b - a * &x));
    let scale = inf_norm(b).max(1.0);
    if !residual.is_finite() || x.iter().any(|v| !v.is_finite()) || residual > RESIDUAL_TOL * scale
    {
        return Err(Error::SolverFailure { residual });
    }
    Ok(Solution { x, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![3.0, 5.0]);
        let s = solve(&a, &b).unwrap();
        assert!((s.x[0] - 0.8).abs() < 1e-14);
        assert!((s.x[1] - 1.4).abs() < 1e-14);
        assert!(s.residual < 1e-14);
    }

    #[test]
    fn singular_system_fails() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(solve(&a, &b), Err(Error::SolverFailure { .. })));
    }

    #[test]
    fn empty_system_is_trivial() {
        let s = solve(&DMatrix::zeros(0, 0), &DVector::zeros(0)).unwrap();
        assert_eq!(s.x.len(), 0);
    }
}
