//! Directory of JSON run records keyed by content hash, plus registered models.

use crate::error::WorkbenchError;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use shiftbench_core::model::ModelConfig;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    /// `estimate`, `worst_case`, `sweep` or `simulate`.
    pub kind: String,
    /// The request with every reference resolved.
    pub config: Value,
    pub result: Value,
    pub toolkit_version: String,
    /// Seconds since the Unix epoch when the record was first written.
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub kind: String,
    pub created_at: u64,
}

/// `sha256(kind ‖ "\n" ‖ canonical JSON)`, first 16 hex digits. Object keys
/// serialize sorted, so the id survives re-serialization.
pub fn run_id(kind: &str, config: &Value) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update(b"\n");
    h.update(config.to_string().as_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl RunRecord {
    pub fn new(kind: &str, config: Value, result: Value) -> RunRecord {
        let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        RunRecord {
            run_id: run_id(kind, &config),
            kind: kind.to_string(),
            config,
            result,
            toolkit_version: crate::TOOLKIT_VERSION.to_string(),
            created_at,
        }
    }
}

fn io(e: impl std::fmt::Display) -> WorkbenchError {
    WorkbenchError::Io(e.to_string())
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Append-only store under `root/runs` and `root/models`; writes go through one lock.
pub struct RunStore {
    root: PathBuf,
    writer: Mutex<()>,
}

impl RunStore {
    pub fn open(root: impl AsRef<Path>) -> Result<RunStore, WorkbenchError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("runs")).map_err(io)?;
        fs::create_dir_all(root.join("models")).map_err(io)?;
        Ok(RunStore { root, writer: Mutex::new(()) })
    }

    fn run_path(&self, id: &str) -> PathBuf {
        self.root.join("runs").join(format!("{id}.json"))
    }

    fn model_path(&self, id: &str) -> PathBuf {
        self.root.join("models").join(format!("{id}.json"))
    }

    fn write_new(path: &Path, text: &str) -> Result<(), WorkbenchError> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    /// Stores `record` unless a record with its id exists, and returns the stored one.
    pub fn append(&self, record: RunRecord) -> Result<RunRecord, WorkbenchError> {
        let _guard = self.writer.lock().map_err(io)?;
        let path = self.run_path(&record.run_id);
        if path.exists() {
            return self.get(&record.run_id);
        }
        Self::write_new(&path, &serde_json::to_string_pretty(&record).map_err(io)?)?;
        Ok(record)
    }

    pub fn get(&self, id: &str) -> Result<RunRecord, WorkbenchError> {
        if !valid_id(id) {
            return Err(WorkbenchError::NotFound(format!("unknown run '{id}'")));
        }
        let text = fs::read_to_string(self.run_path(id)).map_err(|_| WorkbenchError::NotFound(format!("unknown run '{id}'")))?;
        serde_json::from_str(&text).map_err(io)
    }

    pub fn list(&self) -> Result<Vec<RunSummary>, WorkbenchError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("runs")).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let r: RunRecord = serde_json::from_str(&fs::read_to_string(&path).map_err(io)?).map_err(io)?;
                out.push(RunSummary { run_id: r.run_id, kind: r.kind, created_at: r.created_at });
            }
        }
        out.sort_by(|a, b| (a.created_at, &a.run_id).cmp(&(b.created_at, &b.run_id)));
        Ok(out)
    }

    /// Registers a model under `id` (default: its content hash). Returns the id
    /// and whether it was new; a different model under a taken id is a conflict.
    pub fn register_model(&self, id: Option<String>, config: &ModelConfig) -> Result<(String, bool), WorkbenchError> {
        let value = serde_json::to_value(config).map_err(io)?;
        let id = id.unwrap_or_else(|| run_id("model", &value));
        if !valid_id(&id) {
            return Err(WorkbenchError::bad("/id", "model ids use letters, digits, '-' and '_'"));
        }
        let _guard = self.writer.lock().map_err(io)?;
        let path = self.model_path(&id);
        if path.exists() {
            let existing: Value = serde_json::from_str(&fs::read_to_string(&path).map_err(io)?).map_err(io)?;
            if existing == value {
                return Ok((id, false));
            }
            return Err(WorkbenchError::Conflict(format!("model id '{id}' is registered with different content")));
        }
        Self::write_new(&path, &serde_json::to_string_pretty(&value).map_err(io)?)?;
        Ok((id, true))
    }

    pub fn model(&self, id: &str) -> Result<ModelConfig, WorkbenchError> {
        if !valid_id(id) {
            return Err(WorkbenchError::NotFound(format!("unknown model '{id}'")));
        }
        let text = fs::read_to_string(self.model_path(id)).map_err(|_| WorkbenchError::NotFound(format!("unknown model '{id}'")))?;
        serde_json::from_str(&text).map_err(io)
    }

    pub fn models(&self) -> Result<Vec<String>, WorkbenchError> {
        let mut ids: Vec<String> = fs::read_dir(self.root.join("models"))
            .map_err(io)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.path().file_stem().map(|s| s.to_string_lossy().into_owned()))
            .filter(|s| !s.ends_with(".json"))
            .collect();
        ids.sort();
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn model() -> ModelConfig {
        serde_json::from_value(json!({
            "schema_version": 1,
            "variables": [{"name": "X", "family": {"kind": "bernoulli_logit"}, "eta": {"form": "constant", "eta": [0.0]}}]
        }))
        .unwrap()
    }

    #[test]
    fn run_ids_survive_reserialization() {
        let config = json!({"b": [1.0, 0.1, 1e-300], "a": {"z": 2, "y": 0.30000000000000004}});
        let again: Value = serde_json::from_str(&serde_json::to_string_pretty(&config).unwrap()).unwrap();
        assert_eq!(run_id("sweep", &config), run_id("sweep", &again));
        assert_ne!(run_id("sweep", &config), run_id("estimate", &config));
        assert_eq!(run_id("sweep", &config).len(), 16);
    }

    #[test]
    fn records_are_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        let first = store.append(RunRecord::new("sweep", json!({"x": 1}), json!(1))).unwrap();
        let mut second = RunRecord::new("sweep", json!({"x": 1}), json!(2));
        second.created_at += 10;
        assert_eq!(store.append(second).unwrap(), first);
        assert_eq!(store.get(&first.run_id).unwrap(), first);
        assert_eq!(store.list().unwrap().len(), 1);
        assert!(matches!(store.get("../etc"), Err(WorkbenchError::NotFound(_))));
    }

    #[test]
    fn model_registration_detects_collisions() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        assert_eq!(store.register_model(Some("m1".into()), &model()).unwrap(), ("m1".into(), true));
        assert_eq!(store.register_model(Some("m1".into()), &model()).unwrap(), ("m1".into(), false));
        let mut other = model();
        other.variables[0].name = "Y".into();
        assert!(matches!(store.register_model(Some("m1".into()), &other), Err(WorkbenchError::Conflict(_))));
        let (hashed, _) = store.register_model(None, &model()).unwrap();
        let mut expected = vec![hashed, "m1".to_string()];
        expected.sort();
        assert_eq!(store.models().unwrap(), expected);
        assert_eq!(store.model("m1").unwrap(), model());
    }
}
