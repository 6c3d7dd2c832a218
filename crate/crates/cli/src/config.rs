//! Layered run configuration: defaults, then the TOML file, then `XR23D_*`
//! environment variables and flags (clap resolves env below flags).

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

pub const COMMANDS: [&str; 6] = ["ingest", "drr", "eval", "morph", "report", "phantom"];
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

/// Top level of a config file: `seed`, `threads` and one table per command.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    table: toml::Table,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let mut cfg = FileConfig::default();
        for (k, v) in &table {
            match k.as_str() {
                "seed" => {
                    cfg.seed = Some(
                        v.as_integer().and_then(|i| u64::try_from(i).ok()).ok_or_else(|| CliError::Config("seed must be a non-negative integer".into()))?,
                    )
                }
                "threads" => {
                    cfg.threads = Some(
                        v.as_integer()
                            .and_then(|i| usize::try_from(i).ok())
                            .filter(|n| *n > 0)
                            .ok_or_else(|| CliError::Config("threads must be a positive integer".into()))?,
                    )
                }
                c if COMMANDS.contains(&c) => {
                    if !v.is_table() {
                        return Err(CliError::Config(format!("[{c}] must be a table")));
                    }
                }
                other => return Err(CliError::Config(format!("unknown top-level key {other:?}"))),
            }
        }
        cfg.table = table;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn section(&self, command: &str) -> toml::Table {
        self.table.get(command).and_then(|v| v.as_table()).cloned().unwrap_or_default()
    }
}

/// Overlay the flags that were given on the file section and deserialize
/// the result. Flag structs serialize absent options as missing keys.
pub fn resolve<T: DeserializeOwned>(command: &str, file: &FileConfig, flags: &impl Serialize) -> Result<T, CliError> {
    let mut merged = file.section(command);
    let given = toml::Table::try_from(flags).map_err(|e| CliError::Config(e.to_string()))?;
    merged.extend(given);
    T::deserialize(toml::Value::Table(merged)).map_err(|e| CliError::Config(format!("[{command}] {}", e.message())))
}

/// The config that reproduces a run: the seed and the resolved command
/// section. Output location and thread count are excluded because they do
/// not affect outputs.
pub fn effective_toml(command: &str, seed: u64, section: &impl Serialize) -> Result<String, CliError> {
    let mut table = toml::Table::new();
    table.insert("seed".into(), toml::Value::Integer(seed as i64));
    let body = toml::Value::try_from(section).map_err(|e| CliError::Config(e.to_string()))?;
    table.insert(command.into(), body);
    toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))
}
