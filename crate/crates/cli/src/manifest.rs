//! Run manifests: what a command read, what it wrote, and how to rerun it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use influence::io::{sha256_file, sha256_hex, write_atomic, DATA_DIR_ENV};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format_version: u64,
    pub toolkit_version: String,
    pub command: String,
    /// Arguments after the command name, without `--out` and `--jobs`.
    pub args: Vec<String>,
    /// Directory the arguments are relative to.
    pub cwd: PathBuf,
    /// Value of the data-directory variable at run time.
    pub data_dir: Option<String>,
    pub jobs: Option<usize>,
    /// Config after command-line overrides.
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputRecord>,
    /// Output files relative to the output directory, with their hashes.
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(CliError::data(format!(
                "{}: unsupported manifest version {}",
                path.display(),
                manifest.format_version
            )));
        }
        Ok(manifest)
    }
}

/// How the process was invoked, minus the parts a replay substitutes.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: String,
    pub args: Vec<String>,
    pub cwd: PathBuf,
    pub jobs: Option<usize>,
}

impl Invocation {
    /// Split raw arguments (without the program name) into the command and
    /// its replayable arguments.
    pub fn from_argv(argv: &[String], jobs: Option<usize>) -> CliResult<Self> {
        let mut kept = Vec::new();
        let mut it = argv.iter();
        while let Some(a) = it.next() {
            if a == "--out" || a == "--jobs" {
                it.next();
            } else if !(a.starts_with("--out=") || a.starts_with("--jobs=")) {
                kept.push(a.clone());
            }
        }
        if kept.is_empty() {
            return Err(CliError::usage("no command given"));
        }
        let command = kept.remove(0);
        let cwd = std::env::current_dir().map_err(|e| CliError::data(format!("current directory: {e}")))?;
        Ok(Self {
            command,
            args: kept,
            cwd,
            jobs,
        })
    }
}

/// An output directory that hashes everything written into it.
pub struct OutDir {
    root: PathBuf,
    outputs: BTreeMap<String, String>,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::data(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn create_subdir(&self, rel: &str) -> CliResult<PathBuf> {
        let dir = self.path(rel);
        fs::create_dir_all(&dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        Ok(dir)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.path(rel), bytes)?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Record a file some other writer produced.
    pub fn record(&mut self, rel: &str) -> CliResult<()> {
        let hash = sha256_file(&self.path(rel))?;
        self.outputs.insert(rel.to_string(), hash);
        Ok(())
    }
}

/// Collects provenance while a command runs.
pub struct ManifestBuilder {
    invocation: Invocation,
    started: Instant,
    started_unix: u64,
    config: Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<InputRecord>,
}

impl ManifestBuilder {
    pub fn new(invocation: Invocation) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self {
            invocation,
            started: Instant::now(),
            started_unix,
            config: Value::Null,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
        }
    }

    pub fn config(&mut self, config: &impl Serialize) {
        self.config = serde_json::to_value(config).expect("config serializes to JSON");
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Hash an input file; returns the hash.
    pub fn input(&mut self, path: &Path) -> CliResult<String> {
        let sha256 = sha256_file(path)?;
        let path = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
        if !self.inputs.iter().any(|r| r.path == path) {
            self.inputs.push(InputRecord {
                path,
                sha256: sha256.clone(),
            });
        }
        Ok(sha256)
    }

    /// Write `manifest.json` last, once every output is in place.
    pub fn finish(self, out: OutDir) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            format_version: MANIFEST_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.invocation.command,
            args: self.invocation.args,
            cwd: self.invocation.cwd,
            data_dir: std::env::var(DATA_DIR_ENV).ok(),
            jobs: self.invocation.jobs,
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: out.outputs,
            started_unix: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        write_atomic(&out.root.join(MANIFEST_FILE), &bytes)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn out_and_jobs_are_stripped() {
        let inv = Invocation::from_argv(&argv("--jobs 2 attribute --config c.toml --out o --top-k 3"), Some(2)).unwrap();
        assert_eq!(inv.command, "attribute");
        assert_eq!(inv.args, argv("--config c.toml --top-k 3"));
        let inv = Invocation::from_argv(&argv("train --out=o --config c.toml --jobs=1"), None).unwrap();
        assert_eq!(inv.args, argv("--config c.toml"));
    }

    #[test]
    fn outputs_are_hashed_relative_to_the_root() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(&dir.path().join("run")).unwrap();
        out.write("a.txt", b"abc").unwrap();
        let inv = Invocation::from_argv(&argv("train --config c.toml"), None).unwrap();
        let manifest = ManifestBuilder::new(inv).finish(out).unwrap();
        assert_eq!(
            manifest.outputs["a.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let back = RunManifest::read(&dir.path().join("run").join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, manifest);
    }
}
