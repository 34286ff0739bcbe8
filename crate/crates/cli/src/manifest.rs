use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Record of one run. Written after every other output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

pub struct Recorder {
    manifest: RunManifest,
    out_dir: PathBuf,
    started: Instant,
    stage: Instant,
}

/// SHA-256 of the canonical (key-sorted) JSON of the effective parameters.
pub fn config_hash(params: &serde_json::Value) -> String {
    let text = serde_json::to_string(params).expect("json value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Recorder {
    pub fn new(command: &str, params: &serde_json::Value, seed: Option<u64>, out_dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out_dir).map_err(|e| CliError::Input(format!("{}: {e}", out_dir.display())))?;
        Ok(Self {
            manifest: RunManifest {
                command: command.to_string(),
                config_hash: config_hash(params),
                seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                timings: BTreeMap::new(),
            },
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
            stage: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.display().to_string());
    }

    /// Path for an output file, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.manifest.outputs.push(p.display().to_string());
        p
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.output(name);
        fs::write(&p, contents).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
    }

    pub fn lap(&mut self, stage: &str) {
        self.manifest
            .timings
            .insert(stage.to_string(), self.stage.elapsed().as_secs_f64());
        self.stage = Instant::now();
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.manifest
            .timings
            .insert("total".into(), self.started.elapsed().as_secs_f64());
        let p = self.out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&p, text + "\n").map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order() {
        let a = serde_json::json!({"k": 2, "bins": 50});
        let b: serde_json::Value = serde_json::from_str(r#"{"bins":50,"k":2}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn manifest_lists_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Recorder::new("test", &serde_json::json!({}), Some(1), dir.path()).unwrap();
        r.write("a.txt", "x").unwrap();
        r.lap("write");
        let m = r.finish().unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(m).unwrap()).unwrap();
        assert_eq!(v["outputs"].as_array().unwrap().len(), 1);
        assert!(v["timings"]["total"].is_number());
    }
}
