//! Optional TOML config file. Each section is laid over the defaults of the
//! matching library struct; flags are applied afterwards by the caller.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Default)]
pub struct FileConfig {
    table: toml::Table,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let table: toml::Table = text.parse().map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        const KNOWN: [&str; 6] = ["seed", "preprocess", "detection", "train", "run", "synth"];
        if let Some(k) = table.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(CliError::Invalid(format!("{}: unknown section {k:?}", path.display())));
        }
        Ok(FileConfig { table })
    }

    pub fn seed(&self) -> Result<Option<u64>, CliError> {
        match self.table.get("seed") {
            None => Ok(None),
            Some(toml::Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
            Some(v) => Err(CliError::Invalid(format!("config: seed must be a non-negative integer, got {v}"))),
        }
    }

    /// `default` with the keys of `[name]` replaced. Keys that do not name a
    /// field are rejected.
    pub fn section<T: Serialize + DeserializeOwned>(&self, name: &str, default: T) -> Result<T, CliError> {
        let Some(over) = self.table.get(name) else { return Ok(default) };
        let over = over.as_table().ok_or_else(|| CliError::Invalid(format!("config: [{name}] must be a table")))?;
        let bad = |e: String| CliError::Invalid(format!("config [{name}]: {e}"));
        let mut base = toml::Table::try_from(&default).map_err(|e| bad(e.to_string()))?;
        for (k, v) in over {
            base.insert(k.clone(), v.clone());
        }
        let merged: T = base.try_into().map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
        let back = toml::Table::try_from(&merged).map_err(|e| bad(e.to_string()))?;
        if let Some(k) = over.keys().find(|k| !back.contains_key(*k)) {
            return Err(bad(format!("unknown key {k:?}")));
        }
        Ok(merged)
    }
}
