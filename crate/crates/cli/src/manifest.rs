//! Run manifests and output files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One file produced by a command.
#[derive(Debug, Clone)]
pub struct Output {
    /// `None` for the primary output; secondary outputs are written next to
    /// it as `<out>.<suffix>.csv`.
    pub suffix: Option<&'static str>,
    pub schema: Schema,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schema {
    pub name: &'static str,
    pub version: u32,
}

pub const PERMUTATION: Schema = Schema { name: "permutation", version: 1 };
pub const METRICS: Schema = Schema { name: "metrics", version: 1 };
pub const SIMPLEX: Schema = Schema { name: "simplex", version: 1 };
pub const TOY_TRACE: Schema = Schema { name: "toy_trace", version: 1 };
pub const TOY_SUMMARY: Schema = Schema { name: "toy_summary", version: 1 };
pub const SIM_TRACE: Schema = Schema { name: "sim_trace", version: 1 };
pub const SIM_REPORT: Schema = Schema { name: "sim_report", version: 1 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub schema: String,
    pub schema_version: u32,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub outputs: Vec<OutputDigest>,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn manifest_path(out: &Path) -> PathBuf {
    with_suffix(out, ".manifest.json")
}

/// Writes every output under `out` and returns their digests. Without `out`
/// the primary output goes to stdout and secondary outputs to stderr.
pub fn write_outputs(out: Option<&Path>, outputs: &[Output]) -> Result<Vec<OutputDigest>> {
    let mut digests = Vec::with_capacity(outputs.len());
    for o in outputs {
        let target = match (out, o.suffix) {
            (Some(p), None) => Some(p.to_path_buf()),
            (Some(p), Some(s)) => Some(with_suffix(p, &format!(".{s}.csv"))),
            (None, _) => None,
        };
        match &target {
            Some(path) => fs::write(path, &o.content).with_context(|| format!("writing {}", path.display()))?,
            None if o.suffix.is_none() => std::io::stdout().write_all(o.content.as_bytes())?,
            None => std::io::stderr().write_all(o.content.as_bytes())?,
        }
        digests.push(OutputDigest {
            path: target.map_or_else(|| "-".to_string(), |p| p.display().to_string()),
            schema: o.schema.name.to_string(),
            schema_version: o.schema.version,
            sha256: sha256_hex(o.content.as_bytes()),
        });
    }
    Ok(digests)
}

pub fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<()> {
    let path = manifest_path(out);
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
