//! Output directory bookkeeping, run manifests and error classification.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_VIOLATIONS: u8 = 3;

/// A configuration problem detected by the CLI itself.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Maps an error chain onto the exit-code contract.
pub fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<ltc_core::Error>() {
            use ltc_core::Error as E;
            return match e.root() {
                E::Parameter(_) | E::Usage(_) | E::Contract(_) | E::Schema(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Command-line arguments after the program name, without `--out`.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub code_version: String,
    pub working_directory: PathBuf,
    pub duration_seconds: f64,
    /// Files written by the run, relative to the output directory.
    pub outputs: Vec<String>,
    pub exit_code: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// Collects everything a command writes so the manifest can list it.
pub struct Run {
    pub dir: PathBuf,
    pub outputs: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    started: Instant,
}

impl Run {
    pub fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir, outputs: Vec::new(), config: serde_json::Value::Null, seed: None, started: Instant::now() })
    }

    pub fn record_config<T: Serialize>(&mut self, config: &T, seed: Option<u64>) -> Result<()> {
        self.config = serde_json::to_value(config)?;
        self.seed = seed;
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn finish(self, command: &str, args: Vec<String>, exit_code: u8, error: Option<String>) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: command.to_string(),
            args,
            config: self.config,
            seed: self.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            working_directory: std::env::current_dir()?,
            duration_seconds: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
            exit_code,
            error,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

/// Drops `--out X` / `--out=X` so a manifest can be replayed elsewhere.
pub fn strip_out_flag(args: &[String]) -> Vec<String> {
    let mut kept = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            kept.push(a.clone());
        }
    }
    kept
}
