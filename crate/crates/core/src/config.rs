//! YAML plan documents.
//!
//! Schema (version 1):
//!
//! ```yaml
//! version: 1
//! plan_id: edge-sweep
//! devices:
//!   - id: orin
//!     address: 10.0.0.5:7070
//!     labels: {accelerator: gpu, arch: arm64}
//! compilers:
//!   orin:
//!     - {id: identity, identity: true}
//!     - id: tensorrt
//!       flags: {workspace_mb: "1024"}
//! models:
//!   - catalog: ResNet-50
//!   - block: {kind: conv, width: 64, depth: 6}
//!     input_shape: [3, 244, 244]
//! batch_sizes: [1, 2, 4, 8, 16]
//! repetitions: 100            # default 100
//! warmup: 10                  # default 10
//! checkpoint_every: 1         # default 1
//! cpu_sample_interval_ms: 100 # default 100
//! scaling_metrics: true       # default true; requires batch size 1
//! timeouts: {init_s: 86400, bench_s: 3600}
//! ```
//!
//! Unknown keys anywhere are rejected.

use serde_yaml::{Mapping, Value};
use thiserror::Error;

use crate::model::{ExperimentPlan, ValidationError, Violation};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("YAML syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid plan: {0}")]
    Validation(#[from] ValidationError),
    #[error("unsupported schema version {found} (supported: {SCHEMA_VERSION})")]
    Version { found: String },
}

impl ConfigError {
    fn single(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Validation(ValidationError {
            violations: vec![Violation { path: path.into(), message: message.into() }],
        })
    }
}

/// Parses and fully validates a plan document.
pub fn parse_plan(text: &str) -> Result<ExperimentPlan, ConfigError> {
    let value: Value = serde_yaml::from_str(text).map_err(|e| {
        let (line, column) = e.location().map(|l| (l.line(), l.column())).unwrap_or((0, 0));
        ConfigError::Syntax { line, column, message: e.to_string() }
    })?;
    let Value::Mapping(mut doc) = value else {
        return Err(ConfigError::single("<root>", "plan document must be a mapping"));
    };

    match doc.remove("version") {
        None => return Err(ConfigError::single("version", "missing schema version")),
        Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(other) => {
            let found = serde_yaml::to_string(&other).unwrap_or_default().trim().to_string();
            return Err(ConfigError::Version { found });
        }
    }

    let plan: ExperimentPlan =
        serde_path_to_error::deserialize(Value::Mapping(doc)).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            ConfigError::single(path, e.into_inner().to_string())
        })?;
    plan.validate()?;
    Ok(plan)
}

/// Canonical YAML for a plan: `version` first, then fields in schema order,
/// maps sorted by key.
pub fn serialize_plan(plan: &ExperimentPlan) -> String {
    let body = serde_yaml::to_value(plan).expect("plan serializes to YAML");
    let mut doc = Mapping::new();
    doc.insert(Value::from("version"), Value::from(SCHEMA_VERSION));
    if let Value::Mapping(fields) = body {
        for (k, v) in fields {
            doc.insert(k, v);
        }
    }
    serde_yaml::to_string(&Value::Mapping(doc)).expect("mapping serializes")
}
