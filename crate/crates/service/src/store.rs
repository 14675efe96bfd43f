//! Revision-checked annotation persistence: one JSON file per case, replaced
//! atomically on every write.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use pnl_core::data::CaseRecord;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub record: CaseRecord,
    /// Starts at 1 and grows by one on every accepted write.
    pub revision: u64,
    /// Milliseconds since the Unix epoch.
    pub updated_at: u64,
}

#[derive(Debug)]
pub struct AnnotationStore {
    dir: PathBuf,
    entries: RwLock<BTreeMap<String, AnnotationEntry>>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

/// Case ids double as file names, so only a conservative alphabet is accepted.
pub fn valid_case_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl AnnotationStore {
    /// Opens (creating if needed) a store directory and loads every entry.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut entries = BTreeMap::new();
        for item in fs::read_dir(&dir)? {
            let path = item?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let entry: AnnotationEntry = serde_json::from_slice(&fs::read(&path)?)?;
            entries.insert(entry.record.case_id.clone(), entry);
        }
        Ok(Self { dir, entries: RwLock::new(entries), locks: Mutex::new(HashMap::new()) })
    }

    /// Adds records that are not stored yet at revision 1. Existing entries
    /// are left alone. Returns how many were added.
    pub fn seed(&self, records: &[CaseRecord]) -> Result<usize, ServiceError> {
        let mut added = 0;
        for r in records {
            if self.get(&r.case_id).is_none() {
                self.put(r.clone(), 0)?;
                added += 1;
            }
        }
        Ok(added)
    }

    pub fn get(&self, case_id: &str) -> Option<AnnotationEntry> {
        self.entries.read().expect("store lock").get(case_id).cloned()
    }

    pub fn list(&self) -> Vec<AnnotationEntry> {
        self.entries.read().expect("store lock").values().cloned().collect()
    }

    /// Writes `record` if `expected_revision` is the current revision (0 for a
    /// case not stored yet).
    pub fn put(&self, record: CaseRecord, expected_revision: u64) -> Result<AnnotationEntry, ServiceError> {
        let id = record.case_id.clone();
        if !valid_case_id(&id) {
            return Err(ServiceError::BadRequest(format!("invalid case id {id:?}")));
        }
        let lock = self.locks.lock().expect("lock table").entry(id.clone()).or_default().clone();
        let _guard = lock.lock().expect("case lock");

        let current = self.get(&id).map_or(0, |e| e.revision);
        if current != expected_revision {
            return Err(ServiceError::Conflict { case_id: id, current, expected: expected_revision });
        }
        let entry = AnnotationEntry { record, revision: current + 1, updated_at: now_ms() };
        let path = self.dir.join(format!("{id}.json"));
        let tmp = self.dir.join(format!(".{id}.json.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&entry)?)?;
        fs::rename(&tmp, &path)?;
        self.entries.write().expect("store lock").insert(id, entry.clone());
        Ok(entry)
    }
}
