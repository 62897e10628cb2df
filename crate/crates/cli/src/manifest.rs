//! Provenance manifest: config hash, code version and output hashes.
//! No timestamps, so reruns of a seeded config produce the same file.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Loaded;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance_scale: Option<f64>,
    /// File name to sha256.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: &'static str, cfg: &Loaded) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256: sha256_hex(cfg.text.as_bytes()),
            seed: cfg.config.seed,
            tolerance_scale: None,
            outputs: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
