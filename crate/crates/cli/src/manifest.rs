use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: &str = "1";

/// Provenance attached to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: &'static str,
    pub command: String,
    pub inputs: Vec<PathBuf>,
    /// SHA-256 of the parsed arguments and the bytes of every input file.
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tool_version: &'static str,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, args: &impl Serialize, inputs: Vec<PathBuf>, seed: Option<u64>) -> Self {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(args).expect("arguments serialize"));
        for p in &inputs {
            h.update(p.to_string_lossy().as_bytes());
            if p.is_file() {
                if let Ok(bytes) = std::fs::read(p) {
                    h.update(&bytes);
                }
            } else if p.is_dir() {
                for name in ["products.csv", "diversion.csv"] {
                    if let Ok(bytes) = std::fs::read(p.join(name)) {
                        h.update(&bytes);
                    }
                }
            }
        }
        let config_hash = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        RunManifest {
            schema_version: SCHEMA_VERSION,
            command: command.to_owned(),
            inputs,
            config_hash,
            seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}
