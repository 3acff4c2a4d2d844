//! Command-line surface and dispatch.

mod attribute;
mod bounds;
mod detect;
mod lds;
mod replay;
mod train;
mod unlearn;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use influence::ihvp::{Damping, SolverKind};
use influence::io::read_container;

use crate::context::Run;
use crate::error::{CliError, CliResult};
use crate::manifest::{Invocation, ManifestBuilder};

pub const MODEL_FILE: &str = "model.ckpt";
pub const CURVATURE_FILE: &str = "curvature.ckpt";

#[derive(Debug, Parser)]
#[command(name = "influence", version, about = "Influence-function data attribution for small classifiers")]
pub struct Cli {
    /// Worker threads (default: one per CPU). Results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub jobs: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a config; writes model.ckpt and metrics.json.
    Train(train::TrainArgs),
    /// Fit K-FAC or EK-FAC curvature at a checkpoint; writes curvature.ckpt.
    Fit(train::FitArgs),
    /// Score every training example against test points; writes scores.jsonl and top_k.csv.
    Attribute(attribute::AttributeArgs),
    /// Rank training examples by self-influence; writes ranking.csv, self_influence.jsonl
    /// and, when the flipped labels are known, detection.csv.
    Detect(detect::DetectArgs),
    /// Draw the configured label corruption; writes corruption.json.
    Corrupt(detect::CorruptArgs),
    /// Linear Datamodeling Score against retrained subset models; resumable.
    Lds(lds::LdsArgs),
    /// Remove or relabel training examples with one Newton step; writes model.ckpt and unlearn.json.
    Unlearn(unlearn::UnlearnArgs),
    /// A-priori LiSSA and EK-FAC error bounds at a checkpoint; writes bounds.csv.
    Bounds(bounds::BoundsArgs),
    /// Rerun a command from its manifest.json and check the outputs are bit-identical.
    Replay(replay::ReplayArgs),
}

/// Inputs shared by commands that work on a trained model.
#[derive(Debug, Args)]
pub struct ModelInputs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Model checkpoint written by `train` or `unlearn`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolverFlags {
    /// Inverse-curvature route: exact, lissa, kfac or ekfac. Overrides the config.
    #[arg(long, value_parser = parse_solver)]
    pub solver: Option<SolverKind>,
    /// Damping λ > 0 added to the curvature. Overrides the config.
    #[arg(long, value_parser = parse_damping)]
    pub damping: Option<Damping>,
    /// Reuse a K-FAC / EK-FAC fit written by `fit`.
    #[arg(long)]
    pub curvature: Option<PathBuf>,
}

impl SolverFlags {
    /// The solver kind to run: the flag, else the kind of a supplied fit.
    fn kind(&self) -> CliResult<Option<SolverKind>> {
        match (&self.curvature, self.solver) {
            (Some(path), None) => {
                let kind = read_container(path)?.kind;
                kind.parse()
                    .map(Some)
                    .map_err(|_| CliError::data(format!("{} holds no curvature fit", path.display())))
            }
            _ => Ok(self.solver),
        }
    }

    pub fn resolve(&self, run: &mut Run) -> CliResult<influence::io::SolverConfig> {
        Ok(run.resolve_solver(self.kind()?, self.damping))
    }
}

pub fn parse_solver(s: &str) -> Result<SolverKind, String> {
    s.parse().map_err(|e: influence::ihvp::IhvpError| e.to_string())
}

pub fn parse_damping(s: &str) -> Result<Damping, String> {
    let value: f64 = s.parse().map_err(|e| format!("{e}"))?;
    Damping::new(value).map_err(|e| e.to_string())
}

pub fn run(command: Command, invocation: Invocation) -> CliResult<()> {
    let jobs = invocation.jobs;
    let manifest = ManifestBuilder::new(invocation);
    match command {
        Command::Train(a) => train::train(&a, manifest),
        Command::Fit(a) => train::fit(&a, manifest),
        Command::Attribute(a) => attribute::attribute(&a, manifest),
        Command::Detect(a) => detect::detect(&a, manifest),
        Command::Corrupt(a) => detect::corrupt(&a, manifest),
        Command::Lds(a) => lds::lds(&a, manifest),
        Command::Unlearn(a) => unlearn::unlearn(&a, manifest),
        Command::Bounds(a) => bounds::bounds(&a, manifest),
        Command::Replay(a) => replay::replay(&a, jobs),
    }
}
