//! `run_manifest.json`: what ran, with which settings, and what it wrote.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use synthmask::modelgate::BackendDescriptor;
use synthmask::Result;

/// Keys whose values change from run to run (wall-clock timings). They are
/// removed from JSON artifacts before hashing.
pub const VOLATILE_KEYS: &[&str] = &["duration_ms", "total_duration_ms"];

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: &'static str,
    pub config_hash: String,
    pub config: Value,
    pub seeds: BTreeMap<&'static str, u64>,
    pub backend: Option<BackendDescriptor>,
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn strip_volatile(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for key in VOLATILE_KEYS {
                map.remove(*key);
            }
            map.values_mut().for_each(strip_volatile);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_volatile),
        _ => {}
    }
}

/// Re-serialize with sorted keys and volatile keys dropped.
fn canonical_json(text: &str) -> Option<String> {
    let mut v: Value = serde_json::from_str(text).ok()?;
    strip_volatile(&mut v);
    serde_json::to_string(&v).ok()
}

/// SHA-256 of an artifact. JSON and JSON-lines files are hashed in
/// canonical form so timings do not affect the digest; anything else is
/// hashed byte for byte.
pub fn artifact_checksum(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let text = std::str::from_utf8(&bytes).ok();
    let canonical = match (ext, text) {
        ("json", Some(t)) => canonical_json(t),
        ("jsonl", Some(t)) => t
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(canonical_json)
            .collect::<Option<Vec<_>>>()
            .map(|lines| lines.join("\n")),
        _ => None,
    };
    Ok(match canonical {
        Some(c) => sha256_hex(c.as_bytes()),
        None => sha256_hex(&bytes),
    })
}

impl Manifest {
    pub fn new(command: &str, config: Value, backend: Option<BackendDescriptor>) -> Self {
        let config_hash = sha256_hex(config.to_string().as_bytes());
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            config_hash,
            config,
            seeds: BTreeMap::new(),
            backend,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn seed(mut self, name: &'static str, value: u64) -> Self {
        self.seeds.insert(name, value);
        self
    }

    pub fn record(&mut self, dir: &Path, file: &str) -> Result<()> {
        let sum = artifact_checksum(&dir.join(file))?;
        self.artifacts.insert(file.to_string(), sum);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }
}
