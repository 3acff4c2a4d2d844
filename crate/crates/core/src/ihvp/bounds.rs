//! A-priori error bounds for the approximate inverse routes.
//!
//! LiSSA: with `M = I − α(G + λI)` and `m = ‖M‖₂ < 1`, the truncated series
//! after `J` steps misses `α Σ_{j>J} M^j v`, so
//! `‖α r_J − (G + λI)⁻¹ v‖ ≤ α m^{J+1} / (1 − m) · ‖v‖`.
//!
//! EK-FAC: when `G` is block diagonal and each block is diagonal in the
//! layer's Kronecker eigenbasis with true eigenvalues `λ_i`, the EK-FAC
//! inverse with fitted eigenvalues `λ̂_i` satisfies
//! `‖error‖ ≤ max_i |1/(λ_i + λ) − 1/(λ̂_i + λ)| · ‖v‖`.

use nalgebra::{DMatrix, DVector};

use super::{check_len, CurvatureOperator, Damping, EkfacState, IhvpError};
use crate::rng;
use rand::Rng;

/// `α m^{J+1} / (1 − m) · ‖v‖`; fails with [`IhvpError::BoundVoid`] when `m ≥ 1`.
pub fn lissa_error_bound(alpha: f64, opnorm: f64, iterations: usize, v_norm: f64) -> Result<f64, IhvpError> {
    if !(opnorm < 1.0) || opnorm < 0.0 {
        return Err(IhvpError::BoundVoid(opnorm));
    }
    let exponent = i32::try_from(iterations + 1).unwrap_or(i32::MAX);
    Ok(alpha * opnorm.powi(exponent) / (1.0 - opnorm) * v_norm)
}

/// `‖I − α(G + λI)‖₂` from the spectrum of an explicit symmetric `G`.
pub fn exact_lissa_opnorm(curvature: &DMatrix<f64>, alpha: f64, damping: Damping) -> f64 {
    let sym = (curvature + curvature.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    eig.iter()
        .map(|&e| (1.0 - alpha * (e + damping.value())).abs())
        .fold(0.0, f64::max)
}

/// Power-iteration estimate of `‖I − α(G + λI)‖₂` through products only.
///
/// The iteration converges to the eigenvalue of largest magnitude; the
/// returned value is the norm growth of the final step, which never exceeds
/// the true norm.
pub fn estimate_lissa_opnorm(
    op: &CurvatureOperator<'_>,
    alpha: f64,
    damping: Damping,
    iterations: usize,
    seed: u64,
) -> Result<f64, IhvpError> {
    let mut r = rng::seeded(seed);
    let mut x = DVector::from_fn(op.dim(), |_, _| r.random_range(-1.0..1.0));
    let norm = x.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    x /= norm;
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        let gx = op.apply(&x)?;
        let mut y = &x * (1.0 - alpha * damping.value());
        y.axpy(-alpha, &gx, 1.0);
        estimate = y.norm();
        if !estimate.is_finite() {
            return Err(IhvpError::NonFinite("operator norm estimate"));
        }
        if estimate == 0.0 {
            return Ok(0.0);
        }
        x = y / estimate;
    }
    Ok(estimate)
}

/// `max_i |1/(t_i + λ) − 1/(e_i + λ)| · ‖v‖` for true and fitted eigenvalues.
pub fn ekfac_error_bound(
    true_eigenvalues: &DVector<f64>,
    fitted_eigenvalues: &DVector<f64>,
    damping: Damping,
    v_norm: f64,
) -> Result<f64, IhvpError> {
    if true_eigenvalues.len() != fitted_eigenvalues.len() {
        return Err(IhvpError::LengthMismatch(true_eigenvalues.len(), fitted_eigenvalues.len()));
    }
    let lambda = damping.value();
    let worst = true_eigenvalues
        .iter()
        .zip(fitted_eigenvalues.iter())
        .map(|(&t, &e)| (1.0 / (t + lambda) - 1.0 / (e + lambda)).abs())
        .fold(0.0, f64::max);
    Ok(worst * v_norm)
}

/// The eigenvalues EK-FAC effectively inverts: `Λ + l2`, concatenated
/// over layers in parameter order.
pub fn ekfac_effective_eigenvalues(state: &EkfacState) -> DVector<f64> {
    let values: Vec<f64> = state
        .layers()
        .iter()
        .flat_map(|l| l.lambda.iter().map(|&v| v + state.l2_penalty()))
        .collect();
    DVector::from_vec(values)
}

/// `diag(Qᵀ G_l Q)` with `Q = Q_A ⊗ Q_Y` for each diagonal block `G_l` of an
/// explicit curvature matrix, concatenated in the same order as
/// [`ekfac_effective_eigenvalues`].
pub fn eigenbasis_diagonal(state: &EkfacState, curvature: &DMatrix<f64>) -> Result<DVector<f64>, IhvpError> {
    let spec = state.spec();
    check_len(spec.param_count(), curvature.nrows())?;
    check_len(spec.param_count(), curvature.ncols())?;
    let mut out = Vec::with_capacity(spec.param_count());
    for (layer, shape) in state.layers().iter().zip(spec.layers()) {
        let block = curvature.view((shape.offset, shape.offset), (shape.len(), shape.len()));
        for j in 0..shape.inputs + 1 {
            for k in 0..shape.outputs {
                // Basis vector vec(q_Y,k q_A,jᵀ).
                let u = layer.q_a.column(j).kronecker(&layer.q_y.column(k));
                out.push(u.dot(&(block * &u)));
            }
        }
    }
    Ok(DVector::from_vec(out))
}
