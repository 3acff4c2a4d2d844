use nalgebra::DVector;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_len, power_iteration, CurvatureOperator, Damping, IhvpError};
use crate::rng;

/// LiSSA settings.
///
/// The recursion `r_j = v + (I − α(G̃ + λI)) r_{j−1}`, `r_0 = v`, is run for
/// `iterations` steps and `α·r_J` is returned, so the output approximates
/// `(G + λI)⁻¹ v` directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LissaConfig {
    /// Step size; `None` selects `0.9 / (λ̂_max + λ)`.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub iterations: usize,
    /// Mini-batch size for `G̃`; `None` uses the full dataset every step.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub damping: Damping,
    /// Independent chains averaged together.
    #[serde(default = "one")]
    pub repeats: usize,
    /// Power iterations used to estimate `λ_max(G)`.
    #[serde(default = "fifty")]
    pub power_iterations: usize,
}

fn one() -> usize {
    1
}

fn fifty() -> usize {
    50
}

impl LissaConfig {
    pub fn full_batch(iterations: usize, damping: Damping) -> Self {
        Self {
            alpha: None,
            iterations,
            batch_size: None,
            seed: 0,
            damping,
            repeats: 1,
            power_iterations: 50,
        }
    }
}

/// A LiSSA configuration bound to a curvature operator, with its step size
/// resolved and the spectral condition checked.
#[derive(Debug, Clone)]
pub struct LissaSolver<'a> {
    op: CurvatureOperator<'a>,
    config: LissaConfig,
    alpha: f64,
    lambda_max: f64,
}

impl<'a> LissaSolver<'a> {
    pub fn new(op: CurvatureOperator<'a>, config: LissaConfig) -> Result<Self, IhvpError> {
        if config.repeats == 0 {
            return Err(IhvpError::InvalidConfig("repeats must be at least 1".into()));
        }
        if config.batch_size == Some(0) {
            return Err(IhvpError::InvalidConfig("batch_size must be at least 1".into()));
        }
        let lambda_max = power_iteration(op.dim(), config.power_iterations, rng::derive_seed(config.seed, 0xE16), |v| {
            op.apply(v)
        })?
        .max(0.0);
        let damping = config.damping.value();
        let alpha = config.alpha.unwrap_or(0.9 / (lambda_max + damping));
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(IhvpError::InvalidConfig(format!("step size must be positive, got {alpha}")));
        }
        if alpha * (lambda_max + damping) >= 1.0 {
            return Err(IhvpError::SpectralCondition {
                alpha,
                lambda_max,
                damping,
            });
        }
        Ok(Self {
            op,
            config,
            alpha,
            lambda_max,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Power-iteration estimate of `λ_max(G)`.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn config(&self) -> &LissaConfig {
        &self.config
    }

    pub fn damping(&self) -> Damping {
        self.config.damping
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn operator(&self) -> &CurvatureOperator<'a> {
        &self.op
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>, IhvpError> {
        check_len(self.op.dim(), v.len())?;
        let mut total = DVector::zeros(v.len());
        for chain in 0..self.config.repeats {
            total += self.run_chain(v, chain as u64)?;
        }
        Ok(total / self.config.repeats as f64)
    }

    fn run_chain(&self, v: &DVector<f64>, chain: u64) -> Result<DVector<f64>, IhvpError> {
        let damping = self.config.damping.value();
        let n = self.op.sample_count();
        let mut batches = BatchStream::new(n, self.config.batch_size, rng::derive_seed(self.config.seed, chain + 1));
        let mut r = v.clone();
        for iteration in 1..=self.config.iterations {
            let gr = match batches.next_batch() {
                None => self.op.apply(&r)?,
                Some(indices) => self.op.apply_batch(indices, &r)?,
            };
            // r ← v + r − α(G̃ r + λ r)
            let mut next = v + &r * (1.0 - self.alpha * damping);
            next.axpy(-self.alpha, &gr, 1.0);
            if next.iter().any(|x| !x.is_finite()) {
                return Err(IhvpError::Diverged { iteration });
            }
            r = next;
        }
        Ok(r * self.alpha)
    }
}

/// Seeded mini-batches drawn without replacement within each pass.
struct BatchStream {
    batch_size: Option<usize>,
    order: Vec<usize>,
    cursor: usize,
    pass: u64,
    seed: u64,
}

impl BatchStream {
    fn new(n: usize, batch_size: Option<usize>, seed: u64) -> Self {
        let batch_size = batch_size.filter(|&b| b < n);
        Self {
            batch_size,
            order: (0..n).collect(),
            cursor: n,
            pass: 0,
            seed,
        }
    }

    fn next_batch(&mut self) -> Option<&[usize]> {
        let b = self.batch_size?;
        if self.cursor + b > self.order.len() {
            self.order.sort_unstable();
            self.order.shuffle(&mut rng::stream(self.seed, self.pass));
            self.pass += 1;
            self.cursor = 0;
        }
        let batch = &self.order[self.cursor..self.cursor + b];
        self.cursor += b;
        Some(batch)
    }
}

/// One-shot LiSSA estimate of `(G + λI)⁻¹ v`.
pub fn lissa_solve(op: CurvatureOperator<'_>, v: &DVector<f64>, config: &LissaConfig) -> Result<DVector<f64>, IhvpError> {
    LissaSolver::new(op, config.clone())?.apply(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ihvp::solve_dense;
    use nalgebra::DMatrix;

    fn diag_op() -> CurvatureOperator<'static> {
        CurvatureOperator::Dense(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0])))
    }

    fn cfg(alpha: f64, iterations: usize) -> LissaConfig {
        LissaConfig {
            alpha: Some(alpha),
            ..LissaConfig::full_batch(iterations, Damping::new(1.0).unwrap())
        }
    }

    #[test]
    fn zero_iterations_return_scaled_input() {
        let v = DVector::from_vec(vec![2.0, 4.0]);
        let r = lissa_solve(diag_op(), &v, &cfg(0.2, 0)).unwrap();
        assert_eq!(r, &v * 0.2);
    }

    #[test]
    fn converges_to_the_dense_solution() {
        let v = DVector::from_vec(vec![2.0, 4.0]);
        let r = lissa_solve(diag_op(), &v, &cfg(0.2, 200)).unwrap();
        let exact = solve_dense(
            &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0])),
            Damping::new(1.0).unwrap(),
            &v,
        )
        .unwrap();
        assert!((&r - &exact).amax() < 1e-6);
        assert!((r - DVector::from_vec(vec![1.0, 1.0])).amax() < 1e-6);
    }

    #[test]
    fn default_step_size_satisfies_the_spectral_condition() {
        let solver = LissaSolver::new(diag_op(), LissaConfig::full_batch(10, Damping::new(1.0).unwrap())).unwrap();
        assert!((solver.lambda_max() - 3.0).abs() < 1e-6);
        assert!((solver.alpha() - 0.9 / 4.0).abs() < 1e-6);
    }

    #[test]
    fn oversized_step_is_rejected() {
        assert!(matches!(
            LissaSolver::new(diag_op(), cfg(0.3, 10)),
            Err(IhvpError::SpectralCondition { .. })
        ));
    }

    #[test]
    fn batch_stream_covers_each_pass_without_replacement() {
        let mut s = BatchStream::new(10, Some(3), 4);
        let mut seen = Vec::new();
        for _ in 0..3 {
            seen.extend_from_slice(s.next_batch().unwrap());
        }
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        assert!(BatchStream::new(5, None, 0).next_batch().is_none());
        assert!(BatchStream::new(5, Some(5), 0).next_batch().is_none());
    }
}
