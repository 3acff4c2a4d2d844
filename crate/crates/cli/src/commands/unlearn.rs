use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use influence::io::save_checkpoint;
use influence::model;
use influence::unlearning::{unlearn_relabel, unlearn_remove, ForgetEntry, ForgetSet};
use serde_json::json;

use super::{ModelInputs, SolverFlags, MODEL_FILE};
use crate::context::{build_solver, check_compatible, load_model, record_solver_seeds, Run};
use crate::error::{CliError, CliResult};
use crate::manifest::{ManifestBuilder, OutDir};
use crate::report::json_bytes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Take the listed examples out of the training set.
    Remove,
    /// Replace the listed examples' labels with corrected ones.
    Relabel,
}

#[derive(Debug, Args)]
pub struct UnlearnArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// One training index per line; `index,label` lines give corrected labels
    /// for relabel mode. Blank lines and `#` comments are skipped.
    #[arg(long)]
    pub forget: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
}

/// Parse a forget file.
pub fn parse_forget(path: &Path, text: &str, mode: Mode) -> CliResult<ForgetSet> {
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| CliError::data(format!("{}:{}: {what}: `{line}`", path.display(), n + 1));
        let mut fields = line.split(',').map(str::trim);
        let index = fields
            .next()
            .and_then(|f| f.parse::<usize>().ok())
            .ok_or_else(|| bad("expected a training index"))?;
        let label = match fields.next() {
            Some(f) => Some(f.parse::<usize>().map_err(|_| bad("expected a label after the comma"))?),
            None => None,
        };
        if fields.next().is_some() {
            return Err(bad("too many fields"));
        }
        match (mode, label) {
            (Mode::Remove, Some(_)) => return Err(bad("remove mode takes plain indices")),
            (Mode::Relabel, None) => return Err(bad("relabel mode needs `index,label`")),
            _ => {}
        }
        entries.push(ForgetEntry { index, label });
    }
    if entries.is_empty() {
        return Err(CliError::data(format!("{} lists no examples to forget", path.display())));
    }
    Ok(ForgetSet { entries })
}

pub fn unlearn(args: &UnlearnArgs, mut manifest: ManifestBuilder) -> CliResult<()> {
    let mut run = Run::load(&args.inputs.config, &mut manifest)?;
    let solver_cfg = args.solver.resolve(&mut run)?;
    record_solver_seeds(&mut manifest, &solver_cfg);
    let path = &args.forget;
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    manifest.input(path)?;
    let forget = parse_forget(path, &text, args.mode)?;
    let checkpoint = load_model(&args.inputs.checkpoint, &mut manifest)?;
    let (train, _) = run.train(&mut manifest)?;
    let test = run.test(&mut manifest)?;
    check_compatible(&checkpoint.params, &train, "training set")?;
    forget.validate(&train)?;

    let solver = build_solver(
        &solver_cfg,
        &checkpoint,
        &train,
        args.solver.curvature.as_deref(),
        &mut manifest,
    )?;
    let updated = match args.mode {
        Mode::Remove => unlearn_remove(&solver, &checkpoint.params, &train, &forget)?,
        Mode::Relabel => unlearn_relabel(&solver, &checkpoint.params, &train, &forget)?,
    };
    if !updated.theta().iter().all(|x| x.is_finite()) {
        return Err(CliError::Numerical("unlearning step produced non-finite parameters".into()));
    }
    let mode = match args.mode {
        Mode::Remove => "remove",
        Mode::Relabel => "relabel",
    };
    let provenance = json!({
        "mode": mode,
        "forgotten": forget.entries,
        "solver": solver_cfg.kind,
        "damping": solver_cfg.damping.value(),
        "train_size": train.len(),
        "source_checkpoint_sha256": checkpoint.sha256,
    });
    let mut report = provenance.clone();
    if let Some(test) = &test {
        check_compatible(&checkpoint.params, test, "test set")?;
        let before = model::mean_data_loss(&checkpoint.params, test)?;
        let after = model::mean_data_loss(&updated, test)?;
        report["held_out_loss_before"] = before.into();
        report["held_out_loss_after"] = after.into();
        println!("held-out loss {before:.6} -> {after:.6}");
    }

    let mut out = OutDir::create(&args.inputs.out)?;
    save_checkpoint(&out.path(MODEL_FILE), &updated, json!({ "unlearning": provenance }))?;
    out.record(MODEL_FILE)?;
    out.write("unlearn.json", &json_bytes(&report))?;
    println!("{mode}: updated model for {} forgotten examples", forget.len());
    manifest.config(&run.config);
    manifest.finish(out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forget_files() {
        let p = Path::new("f.txt");
        let set = parse_forget(p, "3\n\n# note\n7  # trailing\n", Mode::Remove).unwrap();
        assert_eq!(set.indices(), vec![3, 7]);
        let set = parse_forget(p, "2,1\n5, 0\n", Mode::Relabel).unwrap();
        assert_eq!(set.entries[1], ForgetEntry { index: 5, label: Some(0) });
        assert!(matches!(parse_forget(p, "", Mode::Remove), Err(CliError::Data(_))));
        assert!(parse_forget(p, "2,1\n", Mode::Remove).is_err());
        assert!(parse_forget(p, "2\n", Mode::Relabel).is_err());
        let err = parse_forget(p, "1\nx\n", Mode::Remove).unwrap_err();
        assert!(err.to_string().contains("f.txt:2"));
    }
}
