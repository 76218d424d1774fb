//! Run manifests: what a command read, how it was configured and what it wrote.

use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<InputDigest>,
    /// Digest of the fully resolved settings of the run.
    pub config_digest: String,
    pub outputs: Vec<String>,
    /// From `SOURCE_DATE_EPOCH` when set, otherwise the wall clock.
    pub timestamp: String,
    /// Digest of everything above except the timestamp; outputs quote this value.
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, inputs: &[&Path], settings: &Value, outputs: &[&Path]) -> anyhow::Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(InputDigest {
                    path: p.display().to_string(),
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let config_digest = sha256_hex(serde_json::to_string(settings)?.as_bytes());
        let outputs: Vec<String> = outputs.iter().map(|p| p.display().to_string()).collect();
        let identity = serde_json::json!({
            "command": command,
            "inputs": &inputs,
            "config_digest": &config_digest,
            "outputs": &outputs,
        });
        Ok(Self {
            command: command.to_string(),
            hash: sha256_hex(serde_json::to_string(&identity)?.as_bytes()),
            inputs,
            config_digest,
            outputs,
            timestamp: timestamp(),
        })
    }

    /// Comment line placed at the top of CSV outputs.
    pub fn comment(&self) -> String {
        format!("manifest={}", self.hash)
    }

    /// Writes the manifest next to `primary` as `<primary>.manifest.json`.
    pub fn write_beside(&self, primary: &Path) -> anyhow::Result<()> {
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&name, text).with_context(|| format!("writing {}", Path::new(&name).display()))
    }
}

fn timestamp() -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .unwrap_or_else(|| chrono::Utc::now().timestamp());
    chrono::DateTime::from_timestamp(secs, 0)
        .unwrap_or_default()
        .format("%Y-%m-%dT%H:%M:%SZ")
        .to_string()
}

/// Manifest hash quoted in a CSV produced by this tool, if any.
pub fn csv_manifest(path: &Path) -> anyhow::Result<Option<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.trim_start_matches('#').trim().strip_prefix("manifest=").map(str::to_string)))
}
