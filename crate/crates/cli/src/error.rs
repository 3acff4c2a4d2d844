//! Failure classes and their process exit codes.

use influence::attribution::AttributionError;
use influence::evaluation::EvaluationError;
use influence::ihvp::IhvpError;
use influence::io::IoError;
use influence::unlearning::UnlearningError;
use influence::{DatasetError, ModelError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, a missing or malformed config, or options that do not fit together.
    #[error("{0}")]
    Usage(String),
    /// Unreadable or inconsistent inputs.
    #[error("{0}")]
    Data(String),
    /// Divergence, non-finite values, failed factorizations, irreproducible replays.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numerical(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self::Data(msg.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let msg = e.to_string();
        match e {
            ModelError::InvalidSpec(_) | ModelError::InvalidConfig(_) | ModelError::TooLarge { .. } => Self::Usage(msg),
            ModelError::NonFinite(_) | ModelError::Diverged { .. } => Self::Numerical(msg),
            _ => Self::Data(msg),
        }
    }
}

impl From<IhvpError> for CliError {
    fn from(e: IhvpError) -> Self {
        let msg = e.to_string();
        match e {
            IhvpError::Model(m) => m.into(),
            IhvpError::InvalidDamping(_) | IhvpError::InvalidConfig(_) => Self::Usage(msg),
            IhvpError::DimensionMismatch { .. } | IhvpError::LengthMismatch(..) => Self::Data(msg),
            _ => Self::Numerical(msg),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let msg = e.to_string();
        match e {
            IoError::Config { .. } => Self::Usage(msg),
            IoError::Model(m) => m.into(),
            IoError::Ihvp(i) => i.into(),
            _ => Self::Data(msg),
        }
    }
}

impl From<AttributionError> for CliError {
    fn from(e: AttributionError) -> Self {
        let msg = e.to_string();
        match e {
            AttributionError::Ihvp(i) => i.into(),
            AttributionError::Model(m) => m.into(),
            AttributionError::NonFinite(_) => Self::Numerical(msg),
            _ => Self::Data(msg),
        }
    }
}

impl From<EvaluationError> for CliError {
    fn from(e: EvaluationError) -> Self {
        let msg = e.to_string();
        match e {
            EvaluationError::Model(m) => m.into(),
            EvaluationError::Dataset(d) => d.into(),
            EvaluationError::InvalidRate(_)
            | EvaluationError::EmptySubset { .. }
            | EvaluationError::TooFewSubsets { .. }
            | EvaluationError::InvalidFraction(_)
            | EvaluationError::InvalidBudget(_) => Self::Usage(msg),
            EvaluationError::SeriesLength(..) | EvaluationError::ConstantSeries | EvaluationError::NonFinite(_) => {
                Self::Numerical(msg)
            }
            _ => Self::Data(msg),
        }
    }
}

impl From<UnlearningError> for CliError {
    fn from(e: UnlearningError) -> Self {
        let msg = e.to_string();
        match e {
            UnlearningError::Ihvp(i) => i.into(),
            UnlearningError::Model(m) => m.into(),
            _ => Self::Data(msg),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Data(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_map_to_documented_codes() {
        assert_eq!(CliError::from(IhvpError::InvalidDamping(0.0)).exit_code(), 1);
        assert_eq!(CliError::from(DatasetError::Empty).exit_code(), 2);
        assert_eq!(CliError::from(IhvpError::NotPositiveDefinite).exit_code(), 3);
        assert_eq!(CliError::from(IhvpError::Model(ModelError::NonFinite("theta"))).exit_code(), 3);
        assert_eq!(CliError::from(EvaluationError::InvalidBudget(2.0)).exit_code(), 1);
        assert_eq!(CliError::from(UnlearningError::Empty).exit_code(), 2);
    }
}
