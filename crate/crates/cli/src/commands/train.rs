use std::path::PathBuf;

use clap::Args;
use influence::ihvp::{fit_ekfac, fit_kfac, SolverKind};
use influence::io::{save_checkpoint, save_ekfac, save_kfac};
use influence::model;
use serde_json::json;

use super::{parse_solver, ModelInputs, CURVATURE_FILE, MODEL_FILE};
use crate::context::{check_compatible, curvature_meta, dataset_digest, load_model, record_solver_seeds, Run};
use crate::error::{CliError, CliResult};
use crate::manifest::{ManifestBuilder, OutDir};
use crate::report::json_bytes;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train(args: &TrainArgs, mut manifest: ManifestBuilder) -> CliResult<()> {
    let run = Run::load(&args.config, &mut manifest)?;
    let (data, _) = run.train(&mut manifest)?;
    let test = run.test(&mut manifest)?;
    let cfg = &run.config.training;
    manifest.seed("training", cfg.seed);
    let (params, report) = model::train_with_report(&run.config.model, &data, cfg)?;

    let mut metrics = json!({
        "epochs_run": report.epochs_run,
        "final_risk": report.final_risk,
        "train_loss": model::mean_data_loss(&params, &data)?,
        "train_accuracy": model::accuracy(&params, &data)?,
    });
    if let Some(test) = &test {
        check_compatible(&params, test, "test set")?;
        metrics["test_loss"] = model::mean_data_loss(&params, test)?.into();
        metrics["test_accuracy"] = model::accuracy(&params, test)?.into();
    }
    if let Some(norm) = report.final_grad_norm {
        metrics["final_grad_norm"] = norm.into();
    }

    let mut out = OutDir::create(&args.out)?;
    let meta = json!({ "train_digest": dataset_digest(&data), "epochs_run": report.epochs_run });
    save_checkpoint(&out.path(MODEL_FILE), &params, meta)?;
    out.record(MODEL_FILE)?;
    out.write("metrics.json", &json_bytes(&metrics))?;
    println!(
        "trained {} parameters on {} examples: train accuracy {:.4}{}",
        params.len(),
        data.len(),
        metrics["train_accuracy"].as_f64().unwrap_or(f64::NAN),
        metrics["test_accuracy"]
            .as_f64()
            .map_or(String::new(), |a| format!(", test accuracy {a:.4}"))
    );
    manifest.config(&run.config);
    manifest.finish(out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    /// kfac or ekfac. Overrides the config.
    #[arg(long, value_parser = parse_solver)]
    pub solver: Option<SolverKind>,
}

pub fn fit(args: &FitArgs, mut manifest: ManifestBuilder) -> CliResult<()> {
    let mut run = Run::load(&args.inputs.config, &mut manifest)?;
    let solver = run.resolve_solver(args.solver, None);
    record_solver_seeds(&mut manifest, &solver);
    let checkpoint = load_model(&args.inputs.checkpoint, &mut manifest)?;
    let (data, _) = run.train(&mut manifest)?;
    check_compatible(&checkpoint.params, &data, "training set")?;

    let mut out = OutDir::create(&args.inputs.out)?;
    let path = out.path(CURVATURE_FILE);
    let meta = curvature_meta(&checkpoint, &solver);
    match solver.kind {
        SolverKind::Kfac => save_kfac(&path, &fit_kfac(&checkpoint.params, &data, solver.sampling())?, meta)?,
        SolverKind::Ekfac => save_ekfac(&path, &fit_ekfac(&checkpoint.params, &data, solver.sampling())?, meta)?,
        other => {
            return Err(CliError::usage(format!(
                "only kfac and ekfac fits can be saved, not {other}"
            )))
        }
    }
    out.record(CURVATURE_FILE)?;
    println!("fitted {} curvature on {} examples", solver.kind, data.len());
    manifest.config(&run.config);
    manifest.finish(out)?;
    Ok(())
}
