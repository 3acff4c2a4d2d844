use std::fs;
use std::path::PathBuf;

use clap::Args;
use influence::attribution::{rank_descending, self_influence_all, InfluenceRecord};
use influence::evaluation::{corrupt_labels, detection_curve, inspection_count, CorruptionSpec};
use influence::io::{write_scores, CorruptionSection};

use super::{ModelInputs, SolverFlags};
use crate::context::{build_solver, check_compatible, load_model, record_solver_seeds, Run};
use crate::error::{CliError, CliResult};
use crate::manifest::{ManifestBuilder, OutDir};
use crate::report::{csv_bytes, json_bytes, num};

const SELF_INFLUENCE_FILE: &str = "self_influence.jsonl";
pub const CORRUPTION_FILE: &str = "corruption.json";

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Ground-truth flip map (corruption.json from `corrupt`) for the
    /// training set as loaded. Defaults to the config's corruption.
    #[arg(long)]
    pub flips: Option<PathBuf>,
    /// Comma-separated inspection budgets in (0, 1].
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<f64>>,
}

pub fn detect(args: &DetectArgs, mut manifest: ManifestBuilder) -> CliResult<()> {
    let mut run = Run::load(&args.inputs.config, &mut manifest)?;
    let solver_cfg = args.solver.resolve(&mut run)?;
    record_solver_seeds(&mut manifest, &solver_cfg);
    if let Some(b) = &args.budgets {
        run.config.experiment.budgets = b.clone();
    }
    let budgets = run.config.experiment.budgets.clone();
    if let Some(b) = budgets.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
        return Err(CliError::usage(format!("inspection budget must lie in (0, 1], got {b}")));
    }
    let checkpoint = load_model(&args.inputs.checkpoint, &mut manifest)?;
    let (train, configured) = run.train(&mut manifest)?;
    check_compatible(&checkpoint.params, &train, "training set")?;
    let truth = match &args.flips {
        Some(path) => {
            manifest.input(path)?;
            let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            let spec: CorruptionSpec =
                serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            // The training labels must be the corrupted ones the map describes.
            spec.restore(&train)?;
            Some(spec)
        }
        None => configured,
    };

    let solver = build_solver(
        &solver_cfg,
        &checkpoint,
        &train,
        args.solver.curvature.as_deref(),
        &mut manifest,
    )?;
    let scores = self_influence_all(&solver, &checkpoint.params, &train)?;
    let ranking = rank_descending(&scores);

    let mut out = OutDir::create(&args.inputs.out)?;
    let records: Vec<InfluenceRecord> = scores
        .iter()
        .enumerate()
        .map(|(i, &score)| InfluenceRecord {
            train_index: i,
            test_index: None,
            score,
            solver: solver_cfg.kind.to_string(),
            damping: solver_cfg.damping.value(),
        })
        .collect();
    write_scores(&out.path(SELF_INFLUENCE_FILE), &records)?;
    out.record(SELF_INFLUENCE_FILE)?;

    let mut header = vec!["rank", "train_index", "self_influence"];
    if truth.is_some() {
        header.push("flipped");
    }
    let rows: Vec<Vec<String>> = ranking
        .iter()
        .enumerate()
        .map(|(r, &i)| {
            let mut row = vec![(r + 1).to_string(), i.to_string(), num(scores[i])];
            if let Some(spec) = &truth {
                row.push(spec.is_corrupted(i).to_string());
            }
            row
        })
        .collect();
    out.write("ranking.csv", &csv_bytes(&header, &rows)?)?;

    if let Some(spec) = &truth {
        let curve = detection_curve(&ranking, spec, &budgets)?;
        let n = train.len();
        let rows: Vec<Vec<String>> = curve
            .iter()
            .map(|&(b, recall)| {
                let k = inspection_count(n, b).min(n);
                vec![num(b), k.to_string(), num(recall), num(k as f64 / n as f64)]
            })
            .collect();
        out.write(
            "detection.csv",
            &csv_bytes(&["budget", "inspected", "recall", "random_recall"], &rows)?,
        )?;
        for (b, recall) in curve {
            println!("budget {b}: recall {recall:.4}");
        }
    } else {
        println!("ranked {} training examples by self-influence", train.len());
    }
    manifest.config(&run.config);
    manifest.finish(out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of training labels to flip. Overrides the config.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Corruption seed. Overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn corrupt(args: &CorruptArgs, mut manifest: ManifestBuilder) -> CliResult<()> {
    let mut run = Run::load(&args.config, &mut manifest)?;
    let configured = run.config.experiment.corruption.clone();
    let fraction = args
        .fraction
        .or(configured.as_ref().map(|c| c.fraction))
        .ok_or_else(|| CliError::usage("no corruption fraction: pass --fraction or set [experiment] corruption"))?;
    let seed = args.seed.or(configured.map(|c| c.seed)).unwrap_or(0);
    run.config.experiment.corruption = Some(CorruptionSection { fraction, seed });
    manifest.seed("corruption", seed);
    let clean = run.clean_train(&mut manifest)?;
    let (_, spec) = corrupt_labels(&clean, fraction, seed)?;

    let mut out = OutDir::create(&args.out)?;
    out.write(CORRUPTION_FILE, &json_bytes(&spec))?;
    println!("flipped {} of {} labels", spec.flips.len(), clean.len());
    manifest.config(&run.config);
    manifest.finish(out)?;
    Ok(())
}
