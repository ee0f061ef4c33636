//! Run reports and configuration hashing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a serializable configuration. `serde_json` emits struct fields in
/// declaration order and maps in key order, so equal configs hash equally.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(config)?.as_bytes()))
}

/// What a command did, with enough information to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub metrics: serde_json::Value,
}

impl RunReport {
    pub fn new<T: Serialize>(command: &str, config: &T) -> Result<RunReport> {
        Ok(RunReport {
            command: command.to_string(),
            version: VERSION.to_string(),
            config_hash: config_hash(config)?,
            config: serde_json::to_value(config)?,
            seeds: BTreeMap::new(),
            metrics: serde_json::Value::Object(Default::default()),
        })
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn metric<T: Serialize>(&mut self, name: &str, value: T) -> Result<()> {
        let v = serde_json::to_value(value)?;
        if let serde_json::Value::Object(m) = &mut self.metrics {
            m.insert(name.to_string(), v);
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunReport> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            offset: e.line() as u64,
            msg: e.to_string(),
        })
    }
}
