//! Atomic on-disk checkpoints of an agent's progress through its tasks.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{expand_plan, BenchTask, ExperimentPlan, Measurement};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub plan_id: String,
    /// Digest of the sorted task ids this checkpoint covers.
    pub universe: String,
    pub completed: BTreeMap<String, Measurement>,
    /// Tasks that failed in an earlier session, with the cause. They are
    /// retried on resume.
    #[serde(default)]
    pub failed: BTreeMap<String, String>,
    pub in_progress: Option<String>,
    pub written_at: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("no checkpoint at {0}")]
    Missing(PathBuf),
    #[error("corrupt checkpoint {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("checkpoint {path} has schema version {found}, expected {CHECKPOINT_VERSION}")]
    VersionMismatch { path: PathBuf, found: u64 },
    #[error("checkpoint belongs to a different plan: {0}")]
    PlanMismatch(String),
    #[error("checkpoint I/O on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Digest identifying a task universe independent of order.
pub fn universe_digest<'a>(task_ids: impl IntoIterator<Item = &'a str>) -> String {
    let sorted: BTreeSet<&str> = task_ids.into_iter().collect();
    let mut h = Sha256::new();
    for id in sorted {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(&h.finalize()[..8])
}

impl Checkpoint {
    pub fn empty(plan_id: &str, tasks: &[BenchTask]) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            plan_id: plan_id.to_string(),
            universe: universe_digest(tasks.iter().map(|t| t.task_id.as_str())),
            completed: BTreeMap::new(),
            failed: BTreeMap::new(),
            in_progress: None,
            written_at: Utc::now(),
        }
    }
}

/// Default location: `<state_dir>/<plan_id>.ckpt.json`.
pub fn checkpoint_path(state_dir: &Path, plan_id: &str) -> PathBuf {
    state_dir.join(format!("{plan_id}.ckpt.json"))
}

/// Writes via a sibling temp file and rename, so the path always holds a
/// complete document.
pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let bytes = serde_json::to_vec_pretty(checkpoint).expect("checkpoint serializes");
    {
        let mut f = File::create(&tmp).map_err(io_err)?;
        f.write_all(&bytes).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(CheckpointError::Missing(path.to_path_buf()))
        }
        Err(source) => return Err(CheckpointError::Io { path: path.to_path_buf(), source }),
    };
    let corrupt = |reason: String| CheckpointError::Corrupt { path: path.to_path_buf(), reason };
    if bytes.is_empty() {
        return Err(corrupt("empty file".into()));
    }
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("missing version".into()))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(CheckpointError::VersionMismatch { path: path.to_path_buf(), found: version });
    }
    serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))
}

/// `tasks` minus the checkpoint's completed ids, order preserved.
pub fn remaining_tasks(
    plan_id: &str,
    tasks: &[BenchTask],
    checkpoint: &Checkpoint,
) -> Result<Vec<BenchTask>, CheckpointError> {
    if checkpoint.plan_id != plan_id {
        return Err(CheckpointError::PlanMismatch(format!(
            "checkpoint is for plan `{}`, not `{plan_id}`",
            checkpoint.plan_id
        )));
    }
    let universe = universe_digest(tasks.iter().map(|t| t.task_id.as_str()));
    if checkpoint.universe != universe {
        return Err(CheckpointError::PlanMismatch(
            "task universe differs from the one the checkpoint was written for".into(),
        ));
    }
    let known: BTreeSet<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
    if let Some(stray) = checkpoint.completed.keys().find(|id| !known.contains(id.as_str())) {
        return Err(CheckpointError::PlanMismatch(format!("unknown completed task `{stray}`")));
    }
    Ok(tasks.iter().filter(|t| !checkpoint.completed.contains_key(&t.task_id)).cloned().collect())
}

/// Remaining tasks of a whole plan.
pub fn resume(plan: &ExperimentPlan, checkpoint: &Checkpoint) -> Result<Vec<BenchTask>, CheckpointError> {
    remaining_tasks(&plan.plan_id, &expand_plan(plan), checkpoint)
}
