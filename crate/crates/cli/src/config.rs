use std::fs;
use std::path::{Path, PathBuf};

use hydrostat::experiments::{ExperimentConfig, InitialSpec};
use serde::Deserialize;

use crate::CliError;

/// Parses one `key=value` override. The value is read as a TOML value and
/// falls back to a bare string.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::validation(format!("override `{spec}` is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::validation(format!("override `{spec}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

/// Sets `path` inside `root`, creating intermediate tables.
pub fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut table = root;
    for (i, key) in parents.iter().enumerate() {
        let entry = table.entry(key.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(CliError::validation(format!("override path `{}` runs through a non-table value", path[..=i].join("."))));
            }
        };
    }
    table.insert(last.clone(), value);
    Ok(())
}

/// Reads `path`, applies the overrides and the seed, and resolves a relative
/// snapshot path against the config's directory.
pub fn load(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    for o in overrides {
        let (key, value) = parse_override(o)?;
        apply_override(&mut table, &key, value)?;
    }
    if let Some(seed) = seed {
        let seed = i64::try_from(seed).map_err(|_| CliError::validation(format!("seed {seed} does not fit a TOML integer")))?;
        apply_override(&mut table, &["sim".into(), "seed".into()], toml::Value::Integer(seed))?;
    }
    let mut xcfg = ExperimentConfig::deserialize(toml::Value::Table(table))
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    if let InitialSpec::Snapshot { path: snap } = &mut xcfg.initial {
        if snap.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            *snap = absolute(&base.join(&*snap));
        }
    }
    Ok(xcfg)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}
