use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::kfac::{ekfac_quadratic_form, kfac_quadratic_form};
use super::{
    apply_ekfac_inverse, apply_kfac_inverse, Damping, DenseSolver, EkfacState, IhvpError, KfacState, LissaSolver,
};
use crate::dataset::Dataset;
use crate::model::{self, ModelParams};

/// Names of the inverse-curvature routes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Exact,
    Lissa,
    Kfac,
    Ekfac,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Lissa => "lissa",
            Self::Kfac => "kfac",
            Self::Ekfac => "ekfac",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = IhvpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exact" | "dense" => Ok(Self::Exact),
            "lissa" => Ok(Self::Lissa),
            "kfac" | "k-fac" => Ok(Self::Kfac),
            "ekfac" | "ek-fac" => Ok(Self::Ekfac),
            other => Err(IhvpError::InvalidConfig(format!("unknown solver `{other}`"))),
        }
    }
}

/// A ready-to-use `v ↦ (G + λI)⁻¹ v` map.
#[derive(Debug, Clone)]
pub enum CurvatureSolver<'a> {
    Exact(DenseSolver),
    Lissa(LissaSolver<'a>),
    Kfac { state: KfacState, damping: Damping },
    Ekfac { state: EkfacState, damping: Damping },
}

impl<'a> CurvatureSolver<'a> {
    /// Factor the dense Gauss-Newton Hessian of `data` at `params`.
    pub fn exact(params: &ModelParams, data: &Dataset, damping: Damping) -> Result<Self, IhvpError> {
        let g = model::dense_gnh(params, data)?;
        Ok(Self::Exact(DenseSolver::new(&g, damping)?))
    }

    pub fn kind(&self) -> SolverKind {
        match self {
            Self::Exact(_) => SolverKind::Exact,
            Self::Lissa(_) => SolverKind::Lissa,
            Self::Kfac { .. } => SolverKind::Kfac,
            Self::Ekfac { .. } => SolverKind::Ekfac,
        }
    }

    pub fn damping(&self) -> Damping {
        match self {
            Self::Exact(s) => s.damping(),
            Self::Lissa(s) => s.damping(),
            Self::Kfac { damping, .. } | Self::Ekfac { damping, .. } => *damping,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Exact(s) => s.dim(),
            Self::Lissa(s) => s.dim(),
            Self::Kfac { state, .. } => state.spec().param_count(),
            Self::Ekfac { state, .. } => state.spec().param_count(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>, IhvpError> {
        match self {
            Self::Exact(s) => s.apply(v),
            Self::Lissa(s) => s.apply(v),
            Self::Kfac { state, damping } => apply_kfac_inverse(state, *damping, v),
            Self::Ekfac { state, damping } => apply_ekfac_inverse(state, *damping, v),
        }
    }

    /// `vᵀ (G + λI)⁻¹ v`; the Kronecker routes avoid the back-projection.
    pub fn quadratic_form(&self, v: &DVector<f64>) -> Result<f64, IhvpError> {
        match self {
            Self::Kfac { state, damping } => kfac_quadratic_form(state, *damping, v),
            Self::Ekfac { state, damping } => ekfac_quadratic_form(state, *damping, v),
            _ => Ok(v.dot(&self.apply(v)?)),
        }
    }
}
