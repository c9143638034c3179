//! Artifact names, stage stamps, and idempotent re-runs.
//!
//! Every pipeline stage records a stamp: a fingerprint of the exact
//! configuration and input-file hashes it ran with, plus its output
//! names. Re-running a stage whose stamp still matches is a no-op unless
//! `--force` is given, so pipelines are cheap to re-enter and stale
//! artifacts are rebuilt exactly when an input actually changed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cgc::artifact::{fingerprint, read_json, sha256_hex, write_json};

use crate::CliError;

// Canonical artifact names inside the working directory.
pub const MODEL: &str = "model.cgc1";
pub const TRAIN_REPORT: &str = "train-report.json";
pub const ACTS: &str = "acts.cgca";
pub const SAES: &str = "saes.cgcs";
pub const SAE_STATS: &str = "sae-stats.csv";
pub const DENSITY_JSON: &str = "density.json";
pub const DENSITY_CSV: &str = "density.csv";
pub const IMPORTANCE_JSON: &str = "importance.json";
pub const IMPORTANCE_CSV: &str = "importance.csv";
pub const ABLATE_JSON: &str = "ablate.json";
pub const ABLATE_CSV: &str = "ablate.csv";
pub const CORRELATE_JSON: &str = "correlate.json";
pub const THEOREM1_JSON: &str = "theorem1.json";
pub const THEOREM1_CSV: &str = "theorem1.csv";
pub const THEOREM2_JSON: &str = "theorem2.json";
pub const THEOREM2_CSV: &str = "theorem2.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const MANIFEST: &str = "manifest.json";
pub const EVO_TRACE_CSV: &str = "alloc.cgc-f.trace.csv";

pub fn eval_json(tag: &str) -> String {
    format!("eval.{tag}.json")
}

pub fn alloc_json(method: &str) -> String {
    format!("alloc.{method}.json")
}

pub fn pruned_model(method: &str) -> String {
    format!("model.{method}.cgc1")
}

/// What a stage wrote, keyed by the fingerprint of what it read.
#[derive(Serialize, Deserialize)]
struct Stamp {
    stage: String,
    fingerprint: String,
    outputs: Vec<String>,
}

/// Execution context shared by every subcommand.
pub struct Ctx {
    pub workdir: PathBuf,
    pub corpus_path: PathBuf,
    pub force: bool,
}

impl Ctx {
    pub fn artifact(&self, name: &str) -> PathBuf {
        self.workdir.join(name)
    }

    fn stamp_path(&self, stage: &str) -> PathBuf {
        self.workdir.join("stamps").join(format!("{stage}.json"))
    }

    /// Run `body` unless the stage's stamp matches `inputs` and all its
    /// outputs exist. Returns whether the body ran.
    pub fn stage<F>(
        &self,
        stage: &str,
        inputs: &impl Serialize,
        outputs: &[String],
        body: F,
    ) -> Result<bool, CliError>
    where
        F: FnOnce() -> Result<(), CliError>,
    {
        let fp = fingerprint(inputs).map_err(CliError::from)?;
        let stamp_path = self.stamp_path(stage);
        if !self.force {
            if let Ok(old) = read_json::<Stamp>(&stamp_path) {
                let fresh = old.fingerprint == fp
                    && old.outputs.iter().all(|name| self.artifact(name).exists());
                if fresh {
                    println!("{stage}: up to date ({})", outputs.join(", "));
                    return Ok(false);
                }
            }
        }
        // Stages may run in a directory nothing has created yet (the
        // simulator needs no corpus, for instance).
        std::fs::create_dir_all(&self.workdir)
            .map_err(|e| CliError::Numeric(format!("cannot create working directory: {e}")))?;
        body()?;
        std::fs::create_dir_all(stamp_path.parent().expect("stamp dir"))
            .map_err(|e| CliError::Numeric(format!("cannot create stamp directory: {e}")))?;
        write_json(
            &stamp_path,
            &Stamp {
                stage: stage.to_string(),
                fingerprint: fp,
                outputs: outputs.to_vec(),
            },
        )
        .map_err(CliError::from)?;
        Ok(true)
    }

    /// Read the corpus, failing with a missing-artifact error (exit 2)
    /// when it hasn't been generated yet.
    pub fn read_corpus(&self) -> Result<Vec<u8>, CliError> {
        read_input_bytes(&self.corpus_path, "gen-corpus")
    }
}

/// Read an input file, classifying absence as a missing-artifact error
/// naming the stage that produces it.
pub fn read_input_bytes(path: &Path, produced_by: &str) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Artifact(format!(
                "missing artifact {}; run `cgc {produced_by}` first",
                path.display()
            ))
        } else {
            CliError::Numeric(format!("cannot read {}: {e}", path.display()))
        }
    })
}

/// SHA-256 of an input file, with the same missing-artifact classification.
pub fn input_sha(path: &Path, produced_by: &str) -> Result<String, CliError> {
    Ok(sha256_hex(&read_input_bytes(path, produced_by)?))
}

/// Write bytes, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Numeric(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Numeric(format!("cannot write {}: {e}", path.display())))
}

/// Read a JSON artifact produced by an earlier stage.
pub fn read_json_artifact<T: serde::de::DeserializeOwned>(
    path: &Path,
    produced_by: &str,
) -> Result<T, CliError> {
    if !path.exists() {
        return Err(CliError::Artifact(format!(
            "missing artifact {}; run `cgc {produced_by}` first",
            path.display()
        )));
    }
    read_json(path).map_err(CliError::from)
}

/// Fail with a stale-artifact error when two stages disagree on a
/// fingerprint (exit 2).
pub fn require_match(what: &str, expected: &str, got: &str) -> Result<(), CliError> {
    if expected != got {
        return Err(CliError::Artifact(format!(
            "stale artifact: {what} mismatch (expected {}, found {}); rebuild upstream stages or pass --force",
            &expected[..12.min(expected.len())],
            &got[..12.min(got.len())]
        )));
    }
    Ok(())
}
