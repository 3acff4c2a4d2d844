use std::path::PathBuf;

use clap::{Args, Parser};
use influence::io::{sha256_file, DATA_DIR_ENV};

use super::{Cli, Command};
use crate::error::{CliError, CliResult};
use crate::manifest::{Invocation, RunManifest, MANIFEST_FILE};

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// manifest.json of the run to repeat.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fresh output directory for the rerun.
    #[arg(long)]
    pub out: PathBuf,
}

/// Rerun the recorded command into a new directory, then compare every
/// output hash with the recorded one.
pub fn replay(args: &ReplayArgs, jobs: Option<usize>) -> CliResult<()> {
    let recorded = RunManifest::read(&args.manifest)?;
    if recorded.command == "replay" {
        return Err(CliError::data("a replay manifest cannot be replayed"));
    }
    for input in &recorded.inputs {
        let now = sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(CliError::data(format!("input {} changed since the run", input.path.display())));
        }
    }
    let out = std::path::absolute(&args.out).map_err(|e| CliError::data(format!("{}: {e}", args.out.display())))?;
    std::env::set_current_dir(&recorded.cwd)
        .map_err(|e| CliError::data(format!("{}: {e}", recorded.cwd.display())))?;
    match &recorded.data_dir {
        Some(dir) => std::env::set_var(DATA_DIR_ENV, dir),
        None => std::env::remove_var(DATA_DIR_ENV),
    }

    let mut argv = vec![recorded.command.clone()];
    argv.extend(recorded.args.iter().cloned());
    argv.push("--out".into());
    argv.push(out.to_string_lossy().into_owned());
    let cli = Cli::try_parse_from(std::iter::once("influence".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| CliError::data(format!("recorded arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::data("a replay manifest cannot be replayed"));
    }
    super::run(cli.command, Invocation::from_argv(&argv, jobs)?)?;

    let fresh = RunManifest::read(&out.join(MANIFEST_FILE))?;
    let mut differences = Vec::new();
    for (name, hash) in &recorded.outputs {
        match fresh.outputs.get(name) {
            Some(h) if h == hash => {}
            Some(_) => differences.push(format!("{name} differs")),
            None => differences.push(format!("{name} missing")),
        }
    }
    differences.extend(
        fresh
            .outputs
            .keys()
            .filter(|k| !recorded.outputs.contains_key(*k))
            .map(|k| format!("{k} is new")),
    );
    if differences.is_empty() {
        println!("replay: {} outputs bit-identical", recorded.outputs.len());
        Ok(())
    } else {
        Err(CliError::Numerical(format!("replay is not reproducible: {}", differences.join(", "))))
    }
}
