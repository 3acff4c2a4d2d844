use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{check_len, Damping, IhvpError};

/// Cholesky factorization of `G + λI`, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct DenseSolver {
    damped: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    damping: Damping,
}

impl DenseSolver {
    pub fn new(curvature: &DMatrix<f64>, damping: Damping) -> Result<Self, IhvpError> {
        let (rows, cols) = curvature.shape();
        if rows != cols {
            return Err(IhvpError::NotSquare { rows, cols });
        }
        if curvature.iter().any(|v| !v.is_finite()) {
            return Err(IhvpError::NonFinite("curvature matrix"));
        }
        let scale = curvature.amax().max(1.0);
        let asymmetry = (curvature - curvature.transpose()).amax();
        if asymmetry > 1e-10 * scale {
            return Err(IhvpError::NotSymmetric { asymmetry });
        }
        let mut damped = curvature.clone();
        for i in 0..rows {
            damped[(i, i)] += damping.value();
        }
        let factor = Cholesky::new(damped.clone()).ok_or(IhvpError::NotPositiveDefinite)?;
        Ok(Self {
            damped,
            factor,
            damping,
        })
    }

    pub fn dim(&self) -> usize {
        self.damped.nrows()
    }

    pub fn damping(&self) -> Damping {
        self.damping
    }

    /// `(G + λI)⁻¹ v`, with one step of iterative refinement.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>, IhvpError> {
        check_len(self.dim(), v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(IhvpError::NonFinite("right-hand side"));
        }
        let mut x = self.factor.solve(v);
        let residual = v - &self.damped * &x;
        x += self.factor.solve(&residual);
        Ok(x)
    }

    /// `vᵀ (G + λI)⁻¹ v`.
    pub fn quadratic_form(&self, v: &DVector<f64>) -> Result<f64, IhvpError> {
        Ok(v.dot(&self.apply(v)?))
    }
}

/// Exact `(G + λI)⁻¹ v` for an explicit symmetric PSD `G`.
pub fn solve_dense(curvature: &DMatrix<f64>, damping: Damping, v: &DVector<f64>) -> Result<DVector<f64>, IhvpError> {
    DenseSolver::new(curvature, damping)?.apply(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn diag(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(values))
    }

    #[test]
    fn diagonal_and_pure_damping_cases() {
        let r = solve_dense(&diag(&[1.0, 3.0]), Damping::new(1.0).unwrap(), &DVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert!((r - DVector::from_vec(vec![1.0, 1.0])).amax() < 1e-15);
        let r = solve_dense(&DMatrix::zeros(2, 2), Damping::new(2.0).unwrap(), &DVector::from_vec(vec![4.0, 6.0])).unwrap();
        assert!((r - DVector::from_vec(vec![2.0, 3.0])).amax() < 1e-15);
    }

    #[test]
    fn random_spd_residual_is_tiny() {
        let mut r = rng::seeded(50);
        let b = DMatrix::from_fn(50, 50, |_, _| r.random_range(-1.0..1.0));
        let g = &b * b.transpose();
        let g = (&g + g.transpose()) * 0.5;
        let v = DVector::from_fn(50, |_, _| r.random_range(-1.0..1.0));
        let damping = Damping::new(1e-3).unwrap();
        let x = solve_dense(&g, damping, &v).unwrap();
        let residual = (&g * &x + &x * damping.value() - &v).norm() / v.norm();
        assert!(residual < 1e-10, "residual {residual}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = Damping::new(1.0).unwrap();
        let mut asym = diag(&[1.0, 1.0]);
        asym[(0, 1)] = 0.5;
        assert!(matches!(solve_dense(&asym, d, &DVector::zeros(2)), Err(IhvpError::NotSymmetric { .. })));
        let mut nan = diag(&[1.0, 1.0]);
        nan[(1, 1)] = f64::NAN;
        assert!(matches!(solve_dense(&nan, d, &DVector::zeros(2)), Err(IhvpError::NonFinite(_))));
        assert!(matches!(
            solve_dense(&diag(&[1.0]), d, &DVector::zeros(2)),
            Err(IhvpError::DimensionMismatch { .. })
        ));
    }
}
