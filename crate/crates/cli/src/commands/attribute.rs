use clap::Args;
use influence::attribution::{influence_batch_cached, rank_descending, GradientCache, InfluenceRecord};
use influence::io::write_scores;

use super::{ModelInputs, SolverFlags};
use crate::context::{build_solver, check_compatible, check_indices, load_model, record_solver_seeds, Run};
use crate::error::{CliError, CliResult};
use crate::manifest::{ManifestBuilder, OutDir};
use crate::report::{csv_bytes, num};

const SCORES_FILE: &str = "scores.jsonl";

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Comma-separated test indices (default: the config's list, else every test point).
    #[arg(long, value_delimiter = ',')]
    pub test_indices: Option<Vec<usize>>,
    /// Most positive and most negative scores to list per test point.
    #[arg(long)]
    pub top_k: Option<usize>,
}

pub fn attribute(args: &AttributeArgs, mut manifest: ManifestBuilder) -> CliResult<()> {
    let mut run = Run::load(&args.inputs.config, &mut manifest)?;
    let solver_cfg = args.solver.resolve(&mut run)?;
    record_solver_seeds(&mut manifest, &solver_cfg);
    if let Some(k) = args.top_k {
        run.config.experiment.top_k = k;
    }
    if let Some(t) = &args.test_indices {
        run.config.experiment.test_indices = Some(t.clone());
    }
    let checkpoint = load_model(&args.inputs.checkpoint, &mut manifest)?;
    let (train, _) = run.train(&mut manifest)?;
    let test = run.require_test(&mut manifest)?;
    check_compatible(&checkpoint.params, &train, "training set")?;
    check_compatible(&checkpoint.params, &test, "test set")?;
    let test_indices = run
        .config
        .experiment
        .test_indices
        .clone()
        .unwrap_or_else(|| (0..test.len()).collect());
    if test_indices.is_empty() {
        return Err(CliError::usage("no test indices to attribute"));
    }
    check_indices(&test_indices, test.len(), "test")?;

    let solver = build_solver(
        &solver_cfg,
        &checkpoint,
        &train,
        args.solver.curvature.as_deref(),
        &mut manifest,
    )?;
    let cache = GradientCache::build(&checkpoint.params, &train, checkpoint.sha256.clone())?;
    let k = run.config.experiment.top_k.min(train.len());
    let mut records = Vec::with_capacity(test_indices.len() * train.len());
    let mut rows = Vec::new();
    for &t in &test_indices {
        let scores = influence_batch_cached(&solver, &checkpoint.params, &test.examples()[t], &cache)?;
        let order = rank_descending(&scores);
        for (side, picks) in [("positive", &order[..k]), ("negative", &order[order.len() - k..])] {
            let picks: Vec<usize> = if side == "negative" { picks.iter().rev().copied().collect() } else { picks.to_vec() };
            for (rank, i) in picks.into_iter().enumerate() {
                rows.push(vec![
                    t.to_string(),
                    side.to_string(),
                    (rank + 1).to_string(),
                    i.to_string(),
                    num(scores[i]),
                ]);
            }
        }
        records.extend(scores.into_iter().enumerate().map(|(i, score)| InfluenceRecord {
            train_index: i,
            test_index: Some(t),
            score,
            solver: solver_cfg.kind.to_string(),
            damping: solver_cfg.damping.value(),
        }));
    }

    let mut out = OutDir::create(&args.inputs.out)?;
    write_scores(&out.path(SCORES_FILE), &records)?;
    out.record(SCORES_FILE)?;
    out.write(
        "top_k.csv",
        &csv_bytes(&["test_index", "side", "rank", "train_index", "score"], &rows)?,
    )?;
    println!(
        "attributed {} test points over {} training examples with {} (damping {})",
        test_indices.len(),
        train.len(),
        solver_cfg.kind,
        solver_cfg.damping.value()
    );
    manifest.config(&run.config);
    manifest.finish(out)?;
    Ok(())
}
