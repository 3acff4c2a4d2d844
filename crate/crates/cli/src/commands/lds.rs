use std::path::PathBuf;

use clap::Args;
use influence::attribution::{influence_batch_cached, GradientCache};
use influence::evaluation::{lds as lds_report, random_scores, run_subset, sample_subsets, sample_test_points, SubsetRun};
use influence::ihvp::{Damping, SolverKind};
use influence::io::{load_checkpoint, save_checkpoint, sha256_hex};
use influence::{model, rng, Dataset, ModelParams};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{parse_damping, parse_solver};
use crate::context::{check_compatible, dataset_digest, load_model, record_solver_seeds, Checkpoint, Run};
use crate::error::CliResult;
use crate::manifest::{ManifestBuilder, OutDir};
use crate::report::{csv_bytes, jsonl_bytes, num};

const SUBSET_DIR: &str = "subsets";
/// Stream offset for the null-attribution scores.
const RANDOM_STREAM: u64 = 1 << 32;

#[derive(Debug, Args)]
pub struct LdsArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory. Subset retrains already present there are reused.
    #[arg(long)]
    pub out: PathBuf,
    /// Model to attribute (default: train it from the config).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Solvers to score, comma-separated or repeated (default: the config's).
    #[arg(long, value_delimiter = ',', value_parser = parse_solver)]
    pub solver: Vec<SolverKind>,
    /// Damping λ > 0. Overrides the config.
    #[arg(long, value_parser = parse_damping)]
    pub damping: Option<Damping>,
    /// Number of random subsets. Overrides the config.
    #[arg(long)]
    pub subsets: Option<usize>,
}

#[derive(Serialize)]
struct LdsLine {
    format_version: u64,
    solver: String,
    damping: Option<f64>,
    test_index: usize,
    lds: f64,
}

pub fn lds(args: &LdsArgs, mut manifest: ManifestBuilder) -> CliResult<()> {
    let mut run = Run::load(&args.config, &mut manifest)?;
    if let Some(m) = args.subsets {
        run.config.experiment.lds.subsets = m;
    }
    let solver_cfg = run.resolve_solver(args.solver.first().copied(), args.damping);
    let kinds = if args.solver.is_empty() { vec![solver_cfg.kind] } else { args.solver.clone() };
    let lds_cfg = run.config.experiment.lds.clone();
    lds_cfg.validate()?;
    manifest.seed("training", run.config.training.seed);
    manifest.seed("lds_subsets", lds_cfg.seed);
    manifest.seed("lds_tests", lds_cfg.test_seed);
    for &kind in &kinds {
        let mut cfg = solver_cfg.clone();
        cfg.kind = kind;
        record_solver_seeds(&mut manifest, &cfg);
    }

    let (train, _) = run.train(&mut manifest)?;
    let test = run.require_test(&mut manifest)?;
    let test_points = sample_test_points(test.len(), lds_cfg.test_samples, lds_cfg.test_seed);
    let tests = test.select(&test_points)?;
    let checkpoint = match &args.checkpoint {
        Some(path) => load_model(path, &mut manifest)?,
        None => {
            Checkpoint::in_memory(model::train(&run.config.model, &train, &run.config.training)?)
        }
    };
    check_compatible(&checkpoint.params, &train, "training set")?;
    check_compatible(&checkpoint.params, &tests, "test set")?;

    let mut out = OutDir::create(&args.out)?;
    out.create_subdir(SUBSET_DIR)?;
    let runs = subset_runs(&run, &train, &tests, &lds_cfg, &mut out)?;

    let cache = GradientCache::build(&checkpoint.params, &train, checkpoint.sha256.clone())?;
    let mut lines = Vec::new();
    let mut summary = Vec::new();
    for &kind in &kinds {
        let mut cfg = solver_cfg.clone();
        cfg.kind = kind;
        let solver = cfg.build(&checkpoint.params, &train)?;
        let scores = tests
            .iter()
            .map(|z| influence_batch_cached(&solver, &checkpoint.params, z, &cache))
            .collect::<Result<Vec<_>, _>>()?;
        let report = lds_report(&scores, &runs)?;
        push_report(&mut lines, &mut summary, kind.as_str(), Some(cfg.damping.value()), &report.per_test, &test_points);
        println!("{kind}: mean LDS {:.4}", report.mean);
    }
    let random: Vec<Vec<f64>> = (0..tests.len())
        .map(|t| random_scores(train.len(), rng::derive_seed(lds_cfg.seed, RANDOM_STREAM + t as u64)))
        .collect();
    let report = lds_report(&random, &runs)?;
    push_report(&mut lines, &mut summary, "random", None, &report.per_test, &test_points);
    println!("random: mean LDS {:.4}", report.mean);

    out.write("lds.jsonl", &jsonl_bytes(&lines))?;
    let summary: Vec<Vec<String>> = summary
        .into_iter()
        .map(|(name, damping, mean)| {
            vec![
                name,
                damping.map_or(String::new(), num),
                lds_cfg.subsets.to_string(),
                num(lds_cfg.alpha),
                tests.len().to_string(),
                num(mean),
            ]
        })
        .collect();
    out.write(
        "summary.csv",
        &csv_bytes(&["solver", "damping", "subsets", "alpha", "test_points", "mean_lds"], &summary)?,
    )?;
    manifest.config(&run.config);
    manifest.finish(out)?;
    Ok(())
}

fn push_report(
    lines: &mut Vec<LdsLine>,
    summary: &mut Vec<(String, Option<f64>, f64)>,
    solver: &str,
    damping: Option<f64>,
    per_test: &[f64],
    test_points: &[usize],
) {
    for (&lds, &test_index) in per_test.iter().zip(test_points) {
        lines.push(LdsLine {
            format_version: 1,
            solver: solver.to_string(),
            damping,
            test_index,
            lds,
        });
    }
    let mean = per_test.iter().sum::<f64>() / per_test.len().max(1) as f64;
    summary.push((solver.to_string(), damping, mean));
}

/// Retrain every subset, reusing `subsets/<index>-<key>.ckpt` files whose key
/// matches: the key hashes the architecture, training settings, both
/// datasets and the mask.
fn subset_runs(
    run: &Run,
    train: &Dataset,
    tests: &Dataset,
    lds_cfg: &influence::evaluation::LdsConfig,
    out: &mut OutDir,
) -> CliResult<Vec<SubsetRun>> {
    let masks = sample_subsets(train.len(), lds_cfg.alpha, lds_cfg.subsets, lds_cfg.seed)?;
    let prefix = json!({
        "model": run.config.model,
        "training": run.config.training,
        "train": dataset_digest(train),
        "tests": dataset_digest(tests),
    })
    .to_string();
    let keyed: Vec<(String, String, Vec<bool>)> = masks
        .into_iter()
        .enumerate()
        .map(|(j, mask)| {
            let mut bytes = prefix.clone().into_bytes();
            bytes.extend(mask.iter().map(|&m| u8::from(m)));
            let key = sha256_hex(&bytes);
            (format!("{SUBSET_DIR}/{j:04}-{}.ckpt", &key[..16]), key, mask)
        })
        .collect();

    let mut reused = 0;
    let mut runs: Vec<Option<SubsetRun>> = Vec::with_capacity(keyed.len());
    for (j, (rel, key, mask)) in keyed.iter().enumerate() {
        let found = load_subset(&out.path(rel), key, tests.len(), run.config.training.seed, j, mask);
        reused += usize::from(found.is_some());
        runs.push(found);
    }
    let missing: Vec<usize> = (0..keyed.len()).filter(|&j| runs[j].is_none()).collect();
    let fresh = missing
        .par_iter()
        .map(|&j| run_subset(&run.config.model, train, tests, j, keyed[j].2.clone(), &run.config.training))
        .collect::<Result<Vec<_>, _>>()?;
    for r in fresh {
        let (rel, key, _) = &keyed[r.index];
        save_checkpoint(&out.path(rel), &r.params, json!({ "key": key, "index": r.index, "losses": r.losses }))?;
        let j = r.index;
        runs[j] = Some(r);
    }
    for (rel, _, _) in &keyed {
        out.record(rel)?;
    }
    println!("subset retrains: {} reused, {} run", reused, missing.len());
    Ok(runs.into_iter().map(|r| r.expect("every subset is filled")).collect())
}

fn load_subset(
    path: &std::path::Path,
    key: &str,
    tests: usize,
    seed: u64,
    index: usize,
    mask: &[bool],
) -> Option<SubsetRun> {
    if !path.is_file() {
        return None;
    }
    let (params, meta): (ModelParams, _) = load_checkpoint(path).ok()?;
    if meta["key"] != key {
        return None;
    }
    let losses: Vec<f64> = serde_json::from_value(meta["losses"].clone()).ok()?;
    if losses.len() != tests {
        return None;
    }
    Some(SubsetRun {
        index,
        mask: mask.to_vec(),
        seed,
        params,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_reported_values() {
        let mut lines = Vec::new();
        let mut summary = Vec::new();
        push_report(&mut lines, &mut summary, "exact", Some(0.1), &[1.0, 0.5], &[3, 7]);
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].test_index, 7);
        assert_eq!(summary, vec![("exact".to_string(), Some(0.1), 0.75)]);
    }
}
