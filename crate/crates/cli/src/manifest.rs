//! Run manifests written next to every output.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Every input that determines the outputs: resolved arguments and, for
    /// commands reading a scenario, the scenario itself.
    pub resolved_config: Value,
    /// SHA-256 of the compact JSON encoding of `resolved_config`.
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Object keys are sorted, so equal configurations hash equally.
pub fn config_hash(config: &Value) -> String {
    let bytes = serde_json::to_vec(config).expect("JSON values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl RunManifest {
    pub fn new(command: &str, resolved_config: Value, seeds: Vec<u64>, outputs: &[PathBuf], started: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: config_hash(&resolved_config),
            resolved_config,
            seeds,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
        }
    }

    pub fn write(&self, primary_output: &Path) -> CliResult<PathBuf> {
        let path = manifest_path(primary_output);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Internal(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"b": 1, "a": [1, 2]}"#).unwrap();
        let b = json!({"a": [1, 2], "b": 1});
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&json!({"a": [2, 1], "b": 1})));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn empty_object_hash() {
        assert_eq!(
            config_hash(&json!({})),
            "44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a"
        );
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(
            manifest_path(Path::new("/tmp/run/b.csv")),
            PathBuf::from("/tmp/run/b.csv.manifest.json")
        );
    }
}
