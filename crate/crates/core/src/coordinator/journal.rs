//! Coordinator session journal: one JSON object per line recording every
//! message digest and phase change.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::state::DevicePhase;
use crate::wire::Envelope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum JournalEntry {
    /// A coordinator run (fresh or resumed) starts.
    Run { plan_id: String, resumed: bool },
    Message { device: String, dir: Direction, seq: u64, kind: String, digest: String },
    Phase { device: String, phase: DevicePhase },
}

impl JournalEntry {
    pub fn message(device: &str, dir: Direction, env: &Envelope) -> Self {
        JournalEntry::Message {
            device: device.to_string(),
            dir,
            seq: env.seq,
            kind: env.body.kind().to_string(),
            digest: env.digest(),
        }
    }
}

#[derive(Debug, Default)]
pub struct Journal {
    file: Option<(PathBuf, File)>,
    entries: Vec<JournalEntry>,
}

impl Journal {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens for append, loading earlier entries. Unparseable lines (a torn
    /// tail) are skipped.
    pub fn open(path: &Path) -> io::Result<Self> {
        let entries = match fs::read_to_string(path) {
            Ok(text) => text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect(),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if file.metadata()?.len() > 0 {
            // start on a fresh line in case the previous run died mid-write
            let text = fs::read(path)?;
            if text.last() != Some(&b'\n') {
                file.write_all(b"\n")?;
            }
        }
        Ok(Self { file: Some((path.to_path_buf(), file)), entries })
    }

    pub fn append(&mut self, entry: JournalEntry) -> io::Result<()> {
        if let Some((_, file)) = &mut self.file {
            let mut line = serde_json::to_string(&entry).expect("journal entry serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[JournalEntry] {
        &self.entries
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    /// Last phase recorded for each device across all runs.
    pub fn last_phases(&self) -> BTreeMap<String, DevicePhase> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            if let JournalEntry::Phase { device, phase } = e {
                out.insert(device.clone(), phase.clone());
            }
        }
        out
    }
}

/// Checks that no teardown was sent to a device before it reported or
/// failed, nor before every device of the same run had settled.
pub fn check_teardown_after_reported(entries: &[JournalEntry]) -> Result<(), String> {
    let mut phases: BTreeMap<&str, &DevicePhase> = BTreeMap::new();
    let mut torn: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        match e {
            JournalEntry::Run { .. } => {
                phases.clear();
                torn.clear();
            }
            JournalEntry::Phase { device, phase } => {
                phases.insert(device, phase);
            }
            JournalEntry::Message { device, dir: Direction::Sent, kind, .. } if kind == "teardown" => {
                match phases.get(device.as_str()) {
                    Some(p) if p.is_settled() => {}
                    other => {
                        return Err(format!(
                            "entry {i}: teardown to `{device}` while {}",
                            other.map_or("unknown".to_string(), |p| p.to_string())
                        ))
                    }
                }
                if let Some((d, p)) = phases.iter().find(|(_, p)| !p.is_settled()) {
                    return Err(format!("entry {i}: teardown to `{device}` while `{d}` is {p}"));
                }
                let n = torn.entry(device).or_default();
                *n += 1;
                if *n > 1 {
                    return Err(format!("entry {i}: second teardown to `{device}`"));
                }
            }
            JournalEntry::Message { .. } => {}
        }
    }
    Ok(())
}
