//! Self-contained results archive: plan snapshot, aggregated records and
//! failure manifest in one JSON document, gzip-compressed for `.gz` paths.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ExperimentPlan, ResultRecord, TaskFailure};
use crate::wire::TOOL_VERSION;

pub const ARCHIVE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsArchive {
    pub schema_version: u32,
    pub tool_version: String,
    pub created: DateTime<Utc>,
    pub plan: ExperimentPlan,
    /// Sorted by task id.
    pub records: Vec<ResultRecord>,
    /// Tasks without a record, sorted by task id.
    pub failures: Vec<TaskFailure>,
}

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("archive {path} is not a valid results archive: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("archive {path} has schema version {found}, expected {ARCHIVE_SCHEMA_VERSION}")]
    Version { path: PathBuf, found: u64 },
}

impl ResultsArchive {
    pub fn new(plan: ExperimentPlan, mut records: Vec<ResultRecord>, mut failures: Vec<TaskFailure>) -> Self {
        records.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        failures.sort();
        Self {
            schema_version: ARCHIVE_SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            created: Utc::now(),
            plan,
            records,
            failures,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("archive serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self, ArchiveError> {
        let malformed = |reason: String| ArchiveError::Malformed { path: origin.to_path_buf(), reason };
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| malformed("missing schema_version".into()))?;
        if found != u64::from(ARCHIVE_SCHEMA_VERSION) {
            return Err(ArchiveError::Version { path: origin.to_path_buf(), found });
        }
        serde_json::from_value(value).map_err(|e| malformed(e.to_string()))
    }
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

pub fn write_archive(path: &Path, archive: &ResultsArchive) -> Result<(), ArchiveError> {
    let io_err = |source| ArchiveError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let json = archive.to_json();
    let file = BufWriter::new(File::create(path).map_err(io_err)?);
    if is_gzip(path) {
        let mut gz = GzEncoder::new(file, Compression::default());
        gz.write_all(json.as_bytes()).map_err(io_err)?;
        gz.finish().and_then(|mut w| w.flush()).map_err(io_err)?;
    } else {
        let mut file = file;
        file.write_all(json.as_bytes()).and_then(|()| file.flush()).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<ResultsArchive, ArchiveError> {
    let io_err = |source| ArchiveError::Io { path: path.to_path_buf(), source };
    let file = BufReader::new(File::open(path).map_err(io_err)?);
    let mut text = String::new();
    if is_gzip(path) {
        GzDecoder::new(file).read_to_string(&mut text)
    } else {
        let mut file = file;
        file.read_to_string(&mut text)
    }
    .map_err(|e| match e.kind() {
        io::ErrorKind::InvalidData | io::ErrorKind::InvalidInput | io::ErrorKind::UnexpectedEof => {
            ArchiveError::Malformed { path: path.to_path_buf(), reason: e.to_string() }
        }
        _ => io_err(e),
    })?;
    ResultsArchive::from_json(&text, path)
}
