//! Loading configs, datasets, checkpoints and solvers for a command.

use std::path::{Path, PathBuf};

use influence::evaluation::{corrupt_labels, CorruptionSpec};
use influence::ihvp::{CurvatureSolver, Damping, SolverKind};
use influence::io::{load_checkpoint, load_ekfac, load_kfac, read_container, DatasetSource, RunConfig, SolverConfig};
use influence::io::sha256_hex;
use influence::{model, Dataset, ModelParams};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;

/// A parsed config plus the directory its relative paths resolve against.
pub struct Run {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Run {
    /// Read the config; a missing or malformed file is a usage error.
    pub fn load(path: &Path, manifest: &mut ManifestBuilder) -> CliResult<Self> {
        if !path.is_file() {
            return Err(CliError::usage(format!("config file {} not found", path.display())));
        }
        let config = RunConfig::from_path(path).map_err(|e| CliError::usage(e.to_string()))?;
        manifest.input(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base })
    }

    fn load_source(&self, source: &DatasetSource, manifest: &mut ManifestBuilder) -> CliResult<Dataset> {
        for file in source.files(&self.base) {
            if !file.is_file() {
                return Err(CliError::data(format!("data file {} not found", file.display())));
            }
            manifest.input(&file)?;
        }
        Ok(source.load(&self.base)?)
    }

    /// The training set as configured, before any corruption.
    pub fn clean_train(&self, manifest: &mut ManifestBuilder) -> CliResult<Dataset> {
        self.load_source(&self.config.data.train, manifest)
    }

    /// The training set every model sees: with `[experiment] corruption`
    /// configured, the labels are flipped deterministically.
    pub fn train(&self, manifest: &mut ManifestBuilder) -> CliResult<(Dataset, Option<CorruptionSpec>)> {
        let clean = self.clean_train(manifest)?;
        match &self.config.experiment.corruption {
            Some(c) => {
                manifest.seed("corruption", c.seed);
                let (data, spec) = corrupt_labels(&clean, c.fraction, c.seed)?;
                Ok((data, Some(spec)))
            }
            None => Ok((clean, None)),
        }
    }

    pub fn test(&self, manifest: &mut ManifestBuilder) -> CliResult<Option<Dataset>> {
        self.config.data.test.as_ref().map(|s| self.load_source(s, manifest)).transpose()
    }

    pub fn require_test(&self, manifest: &mut ManifestBuilder) -> CliResult<Dataset> {
        self.test(manifest)?
            .ok_or_else(|| CliError::usage("this command needs a test set: add `test` under [data]"))
    }

    /// Solver settings with command-line overrides applied; the result is
    /// written back into the config so manifests show what actually ran.
    pub fn resolve_solver(&mut self, kind: Option<SolverKind>, damping: Option<Damping>) -> SolverConfig {
        let mut solver = self
            .config
            .solver
            .clone()
            .unwrap_or_else(|| SolverConfig::new(SolverKind::Ekfac, Damping::new(1e-3).expect("positive")));
        if let Some(k) = kind {
            solver.kind = k;
        }
        if let Some(d) = damping {
            solver.damping = d;
        }
        self.config.solver = Some(solver.clone());
        solver
    }
}

pub fn record_solver_seeds(manifest: &mut ManifestBuilder, solver: &SolverConfig) {
    match solver.kind {
        SolverKind::Kfac | SolverKind::Ekfac if !solver.expected_labels => {
            manifest.seed("curvature", solver.curvature_seed)
        }
        SolverKind::Lissa => manifest.seed("lissa", solver.lissa.seed),
        _ => {}
    }
}

/// A model checkpoint and its content hash.
pub struct Checkpoint {
    pub params: ModelParams,
    pub sha256: String,
}

impl Checkpoint {
    /// A model that was never written to disk, hashed by its parameters.
    pub fn in_memory(params: ModelParams) -> Self {
        let bytes: Vec<u8> = params.theta().iter().flat_map(|x| x.to_le_bytes()).collect();
        Self {
            sha256: sha256_hex(&bytes),
            params,
        }
    }
}

pub fn load_model(path: &Path, manifest: &mut ManifestBuilder) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(CliError::data(format!("checkpoint {} not found", path.display())));
    }
    let sha256 = manifest.input(path)?;
    let (params, _) = load_checkpoint(path)?;
    Ok(Checkpoint { params, sha256 })
}

pub fn check_compatible(params: &ModelParams, data: &Dataset, what: &str) -> CliResult<()> {
    model::check_dataset(params, data).map_err(|e| CliError::data(format!("{what} does not fit the checkpoint: {e}")))
}

/// Provenance stored with saved curvature fits.
pub fn curvature_meta(checkpoint: &Checkpoint, solver: &SolverConfig) -> serde_json::Value {
    json!({
        "checkpoint_sha256": checkpoint.sha256,
        "expected_labels": solver.expected_labels,
        "curvature_seed": solver.curvature_seed,
        "pseudo_draws": solver.pseudo_draws,
    })
}

/// Build the configured solver, or load a saved K-FAC / EK-FAC fit.
pub fn build_solver<'a>(
    solver: &SolverConfig,
    checkpoint: &'a Checkpoint,
    train: &'a Dataset,
    curvature: Option<&Path>,
    manifest: &mut ManifestBuilder,
) -> CliResult<CurvatureSolver<'a>> {
    let Some(path) = curvature else {
        return Ok(solver.build(&checkpoint.params, train)?);
    };
    manifest.input(path)?;
    let kind = read_container(path)?.kind;
    let (built, meta) = match (kind.as_str(), solver.kind) {
        ("kfac", SolverKind::Kfac) => {
            let (state, meta) = load_kfac(path)?;
            (
                CurvatureSolver::Kfac {
                    state,
                    damping: solver.damping,
                },
                meta,
            )
        }
        ("ekfac", SolverKind::Ekfac) => {
            let (state, meta) = load_ekfac(path)?;
            (
                CurvatureSolver::Ekfac {
                    state,
                    damping: solver.damping,
                },
                meta,
            )
        }
        _ => {
            return Err(CliError::usage(format!(
                "{} holds a `{kind}` fit but the solver is {}",
                path.display(),
                solver.kind
            )))
        }
    };
    if meta["checkpoint_sha256"] != checkpoint.sha256.as_str() {
        return Err(CliError::data(format!(
            "{} was fitted for a different checkpoint",
            path.display()
        )));
    }
    let spec = match &built {
        CurvatureSolver::Kfac { state, .. } => state.spec(),
        CurvatureSolver::Ekfac { state, .. } => state.spec(),
        _ => unreachable!(),
    };
    if spec != checkpoint.params.spec() {
        return Err(CliError::data(format!("{} does not match the model architecture", path.display())));
    }
    Ok(built)
}

/// Content hash of a dataset: features as little-endian bits, then labels.
pub fn dataset_digest(data: &Dataset) -> String {
    let mut bytes = Vec::with_capacity(data.len() * (data.dim() + 1) * 8);
    for z in data.iter() {
        for x in &z.features {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        bytes.extend_from_slice(&(z.label as u64).to_le_bytes());
    }
    sha256_hex(&bytes)
}

/// Check every index is below `len`.
pub fn check_indices(indices: &[usize], len: usize, what: &str) -> CliResult<()> {
    match indices.iter().find(|&&i| i >= len) {
        Some(i) => Err(CliError::data(format!("{what} index {i} out of range for {len} examples"))),
        None => Ok(()),
    }
}
