//! Writing a run's files and its manifest.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::experiments::Artifacts;

pub const MANIFEST: &str = "manifest.json";

/// SHA-256 over `blob <len>\0<bytes>`, the git object framing.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Hash of the resolved config with the output directory left out, so the
/// same experiment hashes the same wherever it is written.
pub fn input_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.out_dir = None;
    content_hash(&serde_json::to_vec(&c).expect("serializable config"))
}

pub fn manifest(cfg: &ExperimentConfig, out: &Artifacts, wall_seconds: f64) -> Value {
    let files: serde_json::Map<String, Value> = out
        .files
        .iter()
        .map(|(k, v)| (k.clone(), Value::String(content_hash(v))))
        .collect();
    json!({
        "tool": "hamid",
        "version": env!("CARGO_PKG_VERSION"),
        "kind": cfg.kind.name(),
        "config": cfg,
        "derived": out.derived,
        "input_hash": input_hash(cfg),
        "wall_clock_seconds": wall_seconds,
        "files": files,
    })
}

/// Writes every artifact and `manifest.json` under `dir`.
pub fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    out: &Artifacts,
    wall_seconds: f64,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, bytes) in &out.files {
        let path = dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut text = serde_json::to_vec_pretty(&manifest(cfg, out, wall_seconds))?;
    text.push(b'\n');
    fs::write(dir.join(MANIFEST), text).context("writing manifest")?;
    Ok(())
}
