//! Provenance records written beside command outputs.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{contract, Result};

pub const CODE_VERSION: &str = concat!("hstkit ", env!("CARGO_PKG_VERSION"));

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `<dir>/provenance.toml` (code version, command, arguments) and,
/// when given, `<dir>/config.snapshot.toml`.
pub fn write(dir: &Path, command: &str, args: &BTreeMap<String, String>, config: Option<&str>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| contract(format!("{}: {e}", dir.display())))?;
    let mut record = BTreeMap::new();
    record.insert("code_version".to_string(), toml::Value::String(CODE_VERSION.into()));
    record.insert("command".to_string(), toml::Value::String(command.into()));
    let table: toml::Table = args.iter().map(|(k, v)| (k.clone(), toml::Value::String(v.clone()))).collect();
    record.insert("args".to_string(), toml::Value::Table(table));
    if let Some(text) = config {
        record.insert("config_sha256".to_string(), toml::Value::String(sha256_hex(text.as_bytes())));
        let path = dir.join("config.snapshot.toml");
        std::fs::write(&path, text).map_err(|e| contract(format!("{}: {e}", path.display())))?;
    }
    let text = toml::to_string(&record).map_err(contract)?;
    let path = dir.join("provenance.toml");
    std::fs::write(&path, text).map_err(|e| contract(format!("{}: {e}", path.display())))
}
