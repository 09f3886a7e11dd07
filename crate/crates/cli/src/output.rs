use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;
use spraygrid::{Error, Result};

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Table,
    Json,
}

pub fn to_json<S: Serialize>(value: &S) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| Error::io(d, e)),
        _ => Ok(()),
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, to_json(value)?).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Prints the JSON summary or the human table.
pub fn emit<S: Serialize>(format: Format, summary: &S, table: &str) -> Result<()> {
    match format {
        Format::Json => print!("{}", to_json(summary)?),
        Format::Table => print!("{table}"),
    }
    Ok(())
}
