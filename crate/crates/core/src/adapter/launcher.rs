//! Starting adapter instances for a compiler id.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::synthetic::{FaultInjection, SyntheticAdapter, SyntheticProfile};
use super::transport::{InProcessTransport, LineTransport, SubprocessTransport};

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error("no adapter installed for compiler `{0}`")]
    AdapterMissing(String),
    #[error("failed to spawn adapter for `{compiler}`: {source}")]
    Spawn { compiler: String, source: io::Error },
}

pub trait AdapterLauncher: Send + Sync {
    fn supports(&self, compiler_id: &str) -> bool;
    fn launch(&self, compiler_id: &str) -> Result<Box<dyn LineTransport>, LaunchError>;
}

/// Spawn command for one adapter: a whitespace-separated string or an argv list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpawnCommand {
    Line(String),
    Argv(Vec<String>),
}

impl SpawnCommand {
    pub fn argv(&self) -> Vec<String> {
        match self {
            SpawnCommand::Line(s) => s.split_whitespace().map(str::to_string).collect(),
            SpawnCommand::Argv(v) => v.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("reading adapter manifest {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("parsing adapter manifest {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("adapter manifest entry `{0}` has an empty command")]
    EmptyCommand(String),
}

/// JSON object mapping compiler id to spawn command.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdapterManifest {
    pub entries: BTreeMap<String, SpawnCommand>,
}

impl AdapterManifest {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ManifestError> {
        let manifest: Self = serde_json::from_str(text)
            .map_err(|source| ManifestError::Parse { path: origin.to_string(), source })?;
        for (id, cmd) in &manifest.entries {
            if cmd.argv().is_empty() {
                return Err(ManifestError::EmptyCommand(id.clone()));
            }
        }
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ManifestError::Io { path: origin.clone(), source })?;
        Self::parse(&text, &origin)
    }
}

impl AdapterLauncher for AdapterManifest {
    fn supports(&self, compiler_id: &str) -> bool {
        self.entries.contains_key(compiler_id)
    }

    fn launch(&self, compiler_id: &str) -> Result<Box<dyn LineTransport>, LaunchError> {
        let cmd = self
            .entries
            .get(compiler_id)
            .ok_or_else(|| LaunchError::AdapterMissing(compiler_id.to_string()))?;
        let transport = SubprocessTransport::spawn(&cmd.argv())
            .map_err(|source| LaunchError::Spawn { compiler: compiler_id.to_string(), source })?;
        Ok(Box::new(transport))
    }
}

/// Serves every compiler in a synthetic profile on in-process threads.
#[derive(Debug, Clone)]
pub struct InProcessLauncher {
    profile: SyntheticProfile,
    faults: BTreeMap<String, FaultInjection>,
}

impl InProcessLauncher {
    pub fn new(profile: SyntheticProfile) -> Self {
        Self { profile, faults: BTreeMap::new() }
    }

    /// Injects faults into every adapter started for `compiler_id`.
    pub fn with_faults(mut self, compiler_id: impl Into<String>, faults: FaultInjection) -> Self {
        self.faults.insert(compiler_id.into(), faults);
        self
    }
}

impl AdapterLauncher for InProcessLauncher {
    fn supports(&self, compiler_id: &str) -> bool {
        self.profile.compiler_speedup.contains_key(compiler_id)
    }

    fn launch(&self, compiler_id: &str) -> Result<Box<dyn LineTransport>, LaunchError> {
        if !self.supports(compiler_id) {
            return Err(LaunchError::AdapterMissing(compiler_id.to_string()));
        }
        let faults = self.faults.get(compiler_id).cloned().unwrap_or_default();
        let adapter = SyntheticAdapter::new(self.profile.clone(), faults);
        Ok(Box::new(InProcessTransport::start(adapter)))
    }
}
