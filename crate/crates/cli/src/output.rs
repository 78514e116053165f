use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use hydrostat::experiments::{ExperimentConfig, ExperimentMeta, Table};
use hydrostat::fields::snapshot::snapshot_bytes;
use hydrostat::spectral::SpectralField;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: crate::Command,
    pub tool_version: String,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub config: ExperimentConfig,
    pub output_dir: PathBuf,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    /// SHA-256 of every input: the config file, the resolved config, the noise descriptor and snapshot files.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every artifact, keyed by path relative to the output directory.
    pub outputs: BTreeMap<String, String>,
}

/// Single writer for one run directory; records a hash for every file.
pub struct Output {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl Output {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(format!("{}: {e}", root.display())))?;
        Ok(Output { root: root.to_path_buf(), files: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// NDJSON lines; a `null` anywhere means a non-finite number was serialised.
    pub fn ndjson(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        for line in bytes.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
            let v: serde_json::Value = serde_json::from_slice(line).map_err(|e| CliError::io(e.to_string()))?;
            if let Some(at) = null_path(&v) {
                return Err(CliError::numerical(format!("non-finite value in {rel} at {at}")));
            }
        }
        self.write(rel, bytes)
    }

    pub fn table(&mut self, t: &Table) -> Result<(), CliError> {
        if !t.is_finite() {
            return Err(CliError::numerical(format!("non-finite value in table {}", t.name)));
        }
        let mut buf = Vec::new();
        t.write_csv(&mut buf)?;
        self.write(&format!("tables/{}.csv", t.name), &buf)
    }

    pub fn meta(&mut self, lines: &[ExperimentMeta]) -> Result<(), CliError> {
        let mut buf = String::new();
        for m in lines {
            buf.push_str(&m.to_ndjson()?);
            buf.push('\n');
        }
        self.ndjson("meta.ndjson", buf.as_bytes())
    }

    pub fn snapshot(&mut self, stem: &str, field: &SpectralField, time: f64) -> Result<(), CliError> {
        let (payload, header) = snapshot_bytes(field, time)?;
        self.write(&format!("snapshots/{stem}.bin"), &payload)?;
        self.write(&format!("snapshots/{stem}.json"), &header)
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        manifest.outputs = self.files;
        manifest.finished_unix_ms = unix_ms();
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::io(e.to_string()))?;
        let path = self.root.join("manifest.json");
        fs::write(&path, json).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}

/// JSON pointer of the first `null`, if any.
fn null_path(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::Null => Some(String::new()),
        serde_json::Value::Array(a) => a.iter().enumerate().find_map(|(i, x)| null_path(x).map(|p| format!("/{i}{p}"))),
        serde_json::Value::Object(o) => o.iter().find_map(|(k, x)| null_path(x).map(|p| format!("/{k}{p}"))),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha_of_empty() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn null_detection() {
        assert_eq!(null_path(&serde_json::json!({"a": [1.0, null]})).as_deref(), Some("/a/1"));
        assert_eq!(null_path(&serde_json::json!({"a": [1.0, "x"], "b": true})), None);
        let dir = tempfile::tempdir().unwrap();
        let mut out = Output::create(dir.path()).unwrap();
        let e = out.ndjson("x.ndjson", b"{\"v\": null}\n").unwrap_err();
        assert_eq!(e.code, 3);
        let mut t = Table::new("t", &["a"]);
        t.push(vec![f64::NAN]);
        assert_eq!(out.table(&t).unwrap_err().code, 3);
        assert!(out.files().is_empty());
    }
}
