//! TOML run configuration.
//!
//! ```toml
//! [data]
//! train = { kind = "synthetic", generator = "gaussian_blobs", n = 200, dim = 10, classes = 2, seed = 1 }
//! test = { kind = "idx", images = "t10k-images-idx3-ubyte.gz", labels = "t10k-labels-idx1-ubyte.gz" }
//!
//! [model]
//! layer_dims = [10, 2]
//! activation = "relu"
//!
//! [training]
//! learning_rate = 0.1
//! epochs = 20
//! batch_size = 32
//! seed = 0
//! l2_penalty = 0.01
//!
//! [solver]
//! kind = "ekfac"          # exact | lissa | kfac | ekfac
//! damping = 0.001
//!
//! [experiment]
//! top_k = 10
//! ```
//!
//! Relative data paths resolve against `$INFLUENCE_DATA_DIR` when it is set,
//! otherwise against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{generate_synthetic, gaussian_blobs, io_err, read_delimited, read_idx_classes, IoError, LabelColumn};
use crate::dataset::Dataset;
use crate::evaluation::LdsConfig;
use crate::ihvp::{
    fit_ekfac, fit_kfac, CurvatureOperator, CurvatureSolver, Damping, IhvpError, LabelSampling, LissaConfig,
    LissaSolver, SolverKind,
};
use crate::model::{MlpSpec, ModelParams, TrainConfig};

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "INFLUENCE_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        classes: Option<usize>,
    },
    Delimited {
        path: PathBuf,
        label_column: LabelColumn,
        #[serde(default = "comma")]
        delimiter: char,
        #[serde(default)]
        classes: Option<usize>,
    },
    Synthetic {
        generator: String,
        n: usize,
        dim: usize,
        classes: usize,
        seed: u64,
        /// Mean separation for `gaussian_blobs`.
        #[serde(default)]
        separation: Option<f64>,
    },
}

fn comma() -> char {
    ','
}

impl DatasetSource {
    /// Resolve a relative path against the data directory.
    pub fn resolve(path: &Path, base: &Path) -> PathBuf {
        if path.is_absolute() {
            return path.to_path_buf();
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Path::new(&dir).join(path),
            _ => base.join(path),
        }
    }

    /// Files this source reads (resolved), for hashing into manifests.
    pub fn files(&self, base: &Path) -> Vec<PathBuf> {
        match self {
            Self::Idx { images, labels, .. } => vec![Self::resolve(images, base), Self::resolve(labels, base)],
            Self::Delimited { path, .. } => vec![Self::resolve(path, base)],
            Self::Synthetic { .. } => Vec::new(),
        }
    }

    pub fn load(&self, base: &Path) -> Result<Dataset, IoError> {
        match self {
            Self::Idx { images, labels, classes } => {
                read_idx_classes(&Self::resolve(images, base), &Self::resolve(labels, base), *classes)
            }
            Self::Delimited {
                path,
                label_column,
                delimiter,
                classes,
            } => {
                let path = Self::resolve(path, base);
                let delimiter = u8::try_from(*delimiter).map_err(|_| IoError::Config {
                    path: path.clone(),
                    message: format!("delimiter `{delimiter}` is not a single-byte character"),
                })?;
                read_delimited(&path, delimiter, label_column, *classes)
            }
            Self::Synthetic {
                generator,
                n,
                dim,
                classes,
                seed,
                separation,
            } => match (generator.as_str(), separation) {
                ("gaussian_blobs", Some(s)) => gaussian_blobs(*n, *dim, *classes, *s, *seed),
                _ => generate_synthetic(generator, *n, *dim, *classes, *seed),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: DatasetSource,
    #[serde(default)]
    pub test: Option<DatasetSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LissaSection {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repeats: usize,
}

fn default_iterations() -> usize {
    1000
}

fn one() -> usize {
    1
}

impl Default for LissaSection {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            batch_size: None,
            alpha: None,
            seed: 0,
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub damping: Damping,
    /// Seed for the pseudo-labels behind K-FAC / EK-FAC statistics.
    #[serde(default)]
    pub curvature_seed: u64,
    /// Pseudo-label draws per example.
    #[serde(default = "one")]
    pub pseudo_draws: usize,
    /// Use the exact label expectation instead of sampled pseudo-labels.
    #[serde(default)]
    pub expected_labels: bool,
    #[serde(default)]
    pub lissa: LissaSection,
}

impl SolverConfig {
    pub fn new(kind: SolverKind, damping: Damping) -> Self {
        Self {
            kind,
            damping,
            curvature_seed: 0,
            pseudo_draws: 1,
            expected_labels: false,
            lissa: LissaSection::default(),
        }
    }

    pub fn sampling(&self) -> LabelSampling {
        if self.expected_labels {
            LabelSampling::Expected
        } else {
            LabelSampling::Sampled {
                seed: self.curvature_seed,
                draws: self.pseudo_draws,
            }
        }
    }

    pub fn lissa_config(&self) -> LissaConfig {
        LissaConfig {
            alpha: self.lissa.alpha,
            iterations: self.lissa.iterations,
            batch_size: self.lissa.batch_size,
            seed: self.lissa.seed,
            damping: self.damping,
            repeats: self.lissa.repeats,
            power_iterations: 50,
        }
    }

    /// Fit (or factor) the configured solver at `params` over `data`.
    pub fn build<'a>(&self, params: &'a ModelParams, data: &'a Dataset) -> Result<CurvatureSolver<'a>, IhvpError> {
        Ok(match self.kind {
            SolverKind::Exact => CurvatureSolver::exact(params, data, self.damping)?,
            SolverKind::Lissa => CurvatureSolver::Lissa(LissaSolver::new(
                CurvatureOperator::gauss_newton(params, data)?,
                self.lissa_config(),
            )?),
            SolverKind::Kfac => CurvatureSolver::Kfac {
                state: fit_kfac(params, data, self.sampling())?,
                damping: self.damping,
            },
            SolverKind::Ekfac => CurvatureSolver::Ekfac {
                state: fit_ekfac(params, data, self.sampling())?,
                damping: self.damping,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSection {
    pub fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Test indices to attribute; all test points when absent.
    #[serde(default)]
    pub test_indices: Option<Vec<usize>>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub lds: LdsConfig,
    #[serde(default)]
    pub corruption: Option<CorruptionSection>,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<f64>,
}

fn default_top_k() -> usize {
    10
}

fn default_budgets() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.4, 0.5]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            test_indices: None,
            top_k: default_top_k(),
            lds: LdsConfig::default(),
            corruption: None,
            budgets: default_budgets(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: MlpSpec,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn parse(path: &Path, text: &str) -> Result<Self, IoError> {
        let cfg: Self = toml::from_str(text).map_err(|e| IoError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.training.validate().map_err(|e| IoError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, IoError> {
        Self::parse(path, &fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[data]
train = { kind = "synthetic", generator = "gaussian_blobs", n = 40, dim = 3, classes = 2, seed = 1 }
test = { kind = "delimited", path = "t.csv", label_column = "y" }

[model]
layer_dims = [3, 2]
activation = "relu"

[training]
learning_rate = 0.5
epochs = 3
batch_size = 8
seed = 4
l2_penalty = 0.01

[solver]
kind = "lissa"
damping = 0.01
lissa = { iterations = 50 }

[experiment]
top_k = 3
lds = { subsets = 4, alpha = 0.5, seed = 2, test_samples = 8 }
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::parse(Path::new("c.toml"), SAMPLE).unwrap();
        assert_eq!(cfg.model.layer_dims(), &[3, 2]);
        let solver = cfg.solver.as_ref().unwrap();
        assert_eq!(solver.kind, SolverKind::Lissa);
        assert_eq!(solver.lissa.iterations, 50);
        assert_eq!(cfg.experiment.lds.subsets, 4);
        let again = RunConfig::parse(Path::new("c.toml"), &cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        let data = cfg.data.train.load(Path::new(".")).unwrap();
        assert_eq!(data.len(), 40);
    }

    #[test]
    fn unknown_keys_and_bad_damping_are_rejected() {
        let bad = SAMPLE.replace("top_k = 3", "top_k = 3\nbogus = 1");
        assert!(matches!(RunConfig::parse(Path::new("c.toml"), &bad), Err(IoError::Config { .. })));
        let bad = SAMPLE.replace("damping = 0.01", "damping = 0.0");
        assert!(RunConfig::parse(Path::new("c.toml"), &bad).is_err());
    }
}
