//! Run manifests.
//!
//! Every successful run records its command, the arguments that define the
//! computation, and the execution context. The recorded arguments exclude
//! `--out` and `--threads` so a rerun can redirect the outputs and change
//! the thread count without touching the mathematics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    /// Argument vector defining the computation (no --out / --threads).
    pub args: Vec<String>,
    pub out_dir: String,
    pub threads: usize,
}

/// Strips `--out` and `--threads` (space- or `=`-separated) from an
/// argument vector.
pub fn computation_args(raw: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(raw.len());
    let mut skip_value = false;
    for arg in raw {
        if skip_value {
            skip_value = false;
            continue;
        }
        if arg == "--out" || arg == "--threads" {
            skip_value = true;
            continue;
        }
        if arg.starts_with("--out=") || arg.starts_with("--threads=") {
            continue;
        }
        out.push(arg.clone());
    }
    out
}

pub fn write(path: &Path, manifest: &Manifest) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::Usage(format!("cannot encode manifest: {e}")))?;
    std::fs::write(path, json + "\n").map_err(|e| {
        CliError::Usage(format!("cannot write {}: {e}", path.display()))
    })
}

pub fn read(path: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: malformed manifest: {e}", path.display())))
}
