//! Append-only result store keyed by task id.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Measurement, TaskFailure};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub task_id: String,
    pub device_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accepted {
    New,
    Duplicate,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("result store {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("result store {path} line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StoreLine {
    Measurement { device_id: String, measurement: Measurement },
    Failure { failure: TaskFailure },
}

#[derive(Debug, Default)]
pub struct ResultStore {
    file: Option<(PathBuf, File)>,
    measurements: BTreeMap<String, (String, Measurement)>,
    failures: BTreeMap<String, TaskFailure>,
}

impl ResultStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens or creates a JSON-lines store. A torn final line (crash during
    /// append) is dropped; damage anywhere else is an error.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let io_err = |source| StoreError::Io { path: path.to_path_buf(), source };
        let mut store = Self::default();
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(e)),
        };
        let lines: Vec<&str> = text.split('\n').collect();
        let mut valid_len = 0;
        for (i, line) in lines.iter().enumerate() {
            let last = i + 1 == lines.len();
            if line.is_empty() {
                if !last {
                    valid_len += 1;
                }
                continue;
            }
            match serde_json::from_str::<StoreLine>(line) {
                Ok(entry) => {
                    if last {
                        break; // no trailing newline: the append did not finish
                    }
                    store.apply(entry);
                    valid_len += line.len() + 1;
                }
                Err(_) if last => break,
                Err(e) => {
                    return Err(StoreError::Corrupt { path: path.to_path_buf(), line: i + 1, reason: e.to_string() })
                }
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
        file.set_len(valid_len as u64).map_err(io_err)?;
        store.file = Some((path.to_path_buf(), file));
        Ok(store)
    }

    fn apply(&mut self, entry: StoreLine) {
        match entry {
            StoreLine::Measurement { device_id, measurement } => {
                self.failures.remove(&measurement.task_id);
                self.measurements.insert(measurement.task_id.clone(), (device_id, measurement));
            }
            StoreLine::Failure { failure } => {
                if !self.measurements.contains_key(&failure.task_id) {
                    self.failures.insert(failure.task_id.clone(), failure);
                }
            }
        }
    }

    fn append(&mut self, entry: &StoreLine) -> Result<(), StoreError> {
        if let Some((path, file)) = &mut self.file {
            let mut line = serde_json::to_string(entry).expect("store line serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|()| file.sync_data())
                .map_err(|source| StoreError::Io { path: path.clone(), source })?;
        }
        Ok(())
    }

    /// Idempotent on identical payloads; a differing payload for a known task
    /// id is a conflict and the stored value wins.
    pub fn insert(&mut self, device_id: &str, measurement: Measurement) -> Result<Result<Accepted, Conflict>, StoreError> {
        if let Some((owner, existing)) = self.measurements.get(&measurement.task_id) {
            if owner == device_id && *existing == measurement {
                return Ok(Ok(Accepted::Duplicate));
            }
            return Ok(Err(Conflict {
                task_id: measurement.task_id,
                device_id: device_id.to_string(),
                reason: "differs from the measurement already collected".into(),
            }));
        }
        let entry = StoreLine::Measurement { device_id: device_id.to_string(), measurement };
        self.append(&entry)?;
        self.apply(entry);
        Ok(Ok(Accepted::New))
    }

    /// Records a failure unless the task already has a measurement.
    pub fn record_failure(&mut self, failure: TaskFailure) -> Result<(), StoreError> {
        if self.measurements.contains_key(&failure.task_id) || self.failures.get(&failure.task_id) == Some(&failure) {
            return Ok(());
        }
        let entry = StoreLine::Failure { failure };
        self.append(&entry)?;
        self.apply(entry);
        Ok(())
    }

    pub fn measurement(&self, task_id: &str) -> Option<&Measurement> {
        self.measurements.get(task_id).map(|(_, m)| m)
    }

    pub fn measurements(&self) -> impl Iterator<Item = &Measurement> {
        self.measurements.values().map(|(_, m)| m)
    }

    pub fn failure(&self, task_id: &str) -> Option<&TaskFailure> {
        self.failures.get(task_id)
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, Utc};

    fn m(id: &str, v: f64) -> Measurement {
        let t = DateTime::parse_from_rfc3339("2026-01-01T00:00:00Z").unwrap().with_timezone(&Utc);
        Measurement {
            task_id: id.into(),
            throughput_samples: vec![v],
            cpu_samples: vec![],
            compile_time_s: 0.0,
            wall_start: t,
            wall_end: t,
        }
    }

    #[test]
    fn dedup_and_conflict() {
        let mut s = ResultStore::in_memory();
        assert_eq!(s.insert("d", m("t", 1.0)).unwrap(), Ok(Accepted::New));
        assert_eq!(s.insert("d", m("t", 1.0)).unwrap(), Ok(Accepted::Duplicate));
        let conflict = s.insert("d", m("t", 2.0)).unwrap().unwrap_err();
        assert_eq!(conflict.task_id, "t");
        assert_eq!(s.measurement("t").unwrap().throughput_samples, vec![1.0]);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn persists_and_tolerates_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        {
            let mut s = ResultStore::open(&path).unwrap();
            s.record_failure(TaskFailure { task_id: "a".into(), device_id: "d".into(), cause: "boom".into() })
                .unwrap();
            s.insert("d", m("b", 3.0)).unwrap().unwrap();
            s.insert("d", m("a", 1.0)).unwrap().unwrap();
        }
        let mut bytes = fs::read(&path).unwrap();
        bytes.extend_from_slice(b"{\"kind\":\"measurement\",\"dev");
        fs::write(&path, &bytes).unwrap();
        let mut s = ResultStore::open(&path).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.failure("a").is_none());
        s.insert("d", m("c", 1.0)).unwrap().unwrap();
        let s = ResultStore::open(&path).unwrap();
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn damaged_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        fs::write(&path, "garbage\n{}\n").unwrap();
        assert!(matches!(ResultStore::open(&path), Err(StoreError::Corrupt { line: 1, .. })));
    }
}
