//! Shared domain vocabulary: plans, tasks, measurements and result records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::blockgen::{catalog_lookup, BlockKind, BlockStackSpec};
use crate::metrics;

pub const DEFAULT_REPETITIONS: u32 = 100;
pub const DEFAULT_WARMUP: u32 = 10;
pub const DEFAULT_CHECKPOINT_EVERY: u32 = 1;
pub const DEFAULT_CPU_SAMPLE_INTERVAL_MS: u64 = 100;
pub const DEFAULT_INIT_TIMEOUT_S: u64 = 24 * 60 * 60;
pub const DEFAULT_BENCH_TIMEOUT_S: u64 = 60 * 60;

/// One invariant violation, located by a dotted field path such as
/// `devices[1].address`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in &self.violations {
            write!(f, "\n  {v}")?;
        }
        Ok(())
    }
}

impl ValidationError {
    pub fn mentions(&self, path: &str) -> bool {
        self.violations.iter().any(|v| v.path.contains(path))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub id: String,
    /// `host:port` of the device's agent daemon.
    pub address: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

/// Splits `host:port` (or `[v6]:port`) into its parts.
pub fn parse_address(address: &str) -> Option<(&str, u16)> {
    let (host, port) = address.rsplit_once(':')?;
    let port = port.parse::<u16>().ok()?;
    if host.is_empty() {
        return None;
    }
    if host.contains(':') && !(host.starts_with('[') && host.ends_with(']')) {
        return None;
    }
    Some((host, port))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompilerSpec {
    pub id: String,
    /// Marks the uncompiled baseline.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub identity: bool,
    /// Opaque backend flags, passed to adapters untouched.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub flags: BTreeMap<String, String>,
}

impl CompilerSpec {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), identity: false, flags: BTreeMap::new() }
    }

    pub fn identity(id: impl Into<String>) -> Self {
        Self { id: id.into(), identity: true, flags: BTreeMap::new() }
    }
}

/// Scalar model-initialization parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    Catalog(String),
    BlockStack(BlockStackSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct ModelSpec {
    pub variant: ModelVariant,
    pub input_shape: Vec<u32>,
    pub init_params: BTreeMap<String, Scalar>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    catalog: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block: Option<BlockStackSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_shape: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    init_params: BTreeMap<String, Scalar>,
}

impl TryFrom<RawModel> for ModelSpec {
    type Error = String;

    fn try_from(raw: RawModel) -> Result<Self, Self::Error> {
        let variant = match (raw.catalog, raw.block) {
            (Some(name), None) => ModelVariant::Catalog(name),
            (None, Some(block)) => ModelVariant::BlockStack(block),
            (Some(_), Some(_)) => return Err("model sets both `catalog` and `block`".into()),
            (None, None) => return Err("model needs one of `catalog` or `block`".into()),
        };
        let input_shape = raw.input_shape.unwrap_or_else(|| default_input_shape(&variant));
        Ok(ModelSpec { variant, input_shape, init_params: raw.init_params })
    }
}

impl From<ModelSpec> for RawModel {
    fn from(m: ModelSpec) -> Self {
        let (catalog, block) = match m.variant {
            ModelVariant::Catalog(name) => (Some(name), None),
            ModelVariant::BlockStack(b) => (None, Some(b)),
        };
        RawModel { catalog, block, input_shape: Some(m.input_shape), init_params: m.init_params }
    }
}

fn default_input_shape(variant: &ModelVariant) -> Vec<u32> {
    match variant {
        ModelVariant::Catalog(_) => vec![3, 224, 224],
        ModelVariant::BlockStack(b) => b.default_input_shape(),
    }
}

impl ModelSpec {
    pub fn catalog(name: impl Into<String>) -> Self {
        let variant = ModelVariant::Catalog(name.into());
        Self { input_shape: default_input_shape(&variant), variant, init_params: BTreeMap::new() }
    }

    pub fn block(kind: BlockKind, width: u32, depth: u32) -> Self {
        let variant = ModelVariant::BlockStack(BlockStackSpec::new(kind, width, depth));
        Self { input_shape: default_input_shape(&variant), variant, init_params: BTreeMap::new() }
    }

    /// Catalog name, or `block:<kind>:w<width>:d<depth>`.
    pub fn key(&self) -> String {
        match &self.variant {
            ModelVariant::Catalog(name) => name.clone(),
            ModelVariant::BlockStack(b) => b.key(),
        }
    }

    pub fn block_spec(&self) -> Option<&BlockStackSpec> {
        match &self.variant {
            ModelVariant::BlockStack(b) => Some(b),
            ModelVariant::Catalog(_) => None,
        }
    }

    /// Architecture family used for report grouping.
    pub fn family(&self) -> String {
        match &self.variant {
            ModelVariant::Catalog(name) => catalog_lookup(name)
                .map(|e| e.family.clone())
                .unwrap_or_else(|_| name.clone()),
            ModelVariant::BlockStack(b) => format!("{}-blocks", b.kind),
        }
    }

    /// Short digest over the full canonical model description.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("model spec serializes");
        let hash = Sha256::digest(&canonical);
        hex::encode(&hash[..4])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterTimeouts {
    #[serde(default = "default_init_timeout")]
    pub init_s: u64,
    #[serde(default = "default_bench_timeout")]
    pub bench_s: u64,
}

fn default_init_timeout() -> u64 {
    DEFAULT_INIT_TIMEOUT_S
}

fn default_bench_timeout() -> u64 {
    DEFAULT_BENCH_TIMEOUT_S
}

impl Default for AdapterTimeouts {
    fn default() -> Self {
        Self { init_s: DEFAULT_INIT_TIMEOUT_S, bench_s: DEFAULT_BENCH_TIMEOUT_S }
    }
}

fn default_repetitions() -> u32 {
    DEFAULT_REPETITIONS
}
fn default_warmup() -> u32 {
    DEFAULT_WARMUP
}
fn default_checkpoint_every() -> u32 {
    DEFAULT_CHECKPOINT_EVERY
}
fn default_cpu_interval() -> u64 {
    DEFAULT_CPU_SAMPLE_INTERVAL_MS
}
fn default_true() -> bool {
    true
}

/// Declarative description of what to benchmark where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub plan_id: String,
    #[serde(default)]
    pub devices: Vec<DeviceSpec>,
    /// Compilers installed per device, keyed by device id.
    #[serde(default)]
    pub compilers: BTreeMap<String, Vec<CompilerSpec>>,
    pub models: Vec<ModelSpec>,
    pub batch_sizes: Vec<u32>,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default = "default_warmup")]
    pub warmup: u32,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u32,
    #[serde(default = "default_cpu_interval")]
    pub cpu_sample_interval_ms: u64,
    /// Whether RTR/ASE/BSR are requested; they need batch size 1.
    #[serde(default = "default_true")]
    pub scaling_metrics: bool,
    #[serde(default)]
    pub timeouts: AdapterTimeouts,
}

impl ExperimentPlan {
    /// A plan with defaults everywhere and no devices or models yet.
    pub fn new(plan_id: impl Into<String>) -> Self {
        Self {
            plan_id: plan_id.into(),
            devices: Vec::new(),
            compilers: BTreeMap::new(),
            models: Vec::new(),
            batch_sizes: vec![1],
            repetitions: DEFAULT_REPETITIONS,
            warmup: DEFAULT_WARMUP,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            cpu_sample_interval_ms: DEFAULT_CPU_SAMPLE_INTERVAL_MS,
            scaling_metrics: true,
            timeouts: AdapterTimeouts::default(),
        }
    }

    pub fn device(&self, id: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.id == id)
    }

    pub fn model_by_key(&self, key: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.key() == key)
    }

    /// The compiler id flagged as the uncompiled baseline, if exactly one exists.
    pub fn identity_compiler(&self) -> Option<&str> {
        let ids: BTreeSet<&str> = self
            .compilers
            .values()
            .flatten()
            .filter(|c| c.identity)
            .map(|c| c.id.as_str())
            .collect();
        if ids.len() == 1 {
            ids.into_iter().next()
        } else {
            None
        }
    }

    /// Checks every plan invariant and reports all violations at once.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut out = Vec::new();
        let mut push = |path: String, message: String| out.push(Violation { path, message });

        if self.plan_id.is_empty() {
            push("plan_id".into(), "must be nonempty".into());
        } else if !self
            .plan_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            push("plan_id".into(), "may only contain ASCII letters, digits, '-', '_' and '.'".into());
        }

        let mut device_ids = BTreeSet::new();
        for (i, d) in self.devices.iter().enumerate() {
            if d.id.is_empty() {
                push(format!("devices[{i}].id"), "must be nonempty".into());
            } else if !device_ids.insert(d.id.as_str()) {
                push(format!("devices[{i}].id"), format!("duplicate device id `{}`", d.id));
            }
            if parse_address(&d.address).is_none() {
                push(
                    format!("devices[{i}].address"),
                    format!("`{}` is not a host:port endpoint", d.address),
                );
            }
        }

        let mut identity_ids = BTreeSet::new();
        let mut plain_ids = BTreeSet::new();
        for (device, list) in &self.compilers {
            if !device_ids.contains(device.as_str()) {
                push(format!("compilers.{device}"), format!("unknown device `{device}`"));
            }
            let mut seen = BTreeSet::new();
            for (j, c) in list.iter().enumerate() {
                let path = format!("compilers.{device}[{j}].id");
                if c.id.is_empty() {
                    push(path, "must be nonempty".into());
                    continue;
                }
                if !seen.insert(c.id.as_str()) {
                    push(path, format!("duplicate compiler `{}` on device `{device}`", c.id));
                }
                if c.identity {
                    identity_ids.insert(c.id.as_str());
                } else {
                    plain_ids.insert(c.id.as_str());
                }
            }
        }
        if !self.compilers.is_empty() || !self.devices.is_empty() {
            match identity_ids.len() {
                0 => push("compilers".into(), "no compiler is flagged `identity`".into()),
                1 => {}
                _ => push(
                    "compilers".into(),
                    format!(
                        "multiple identity compilers: {}",
                        identity_ids.iter().copied().collect::<Vec<_>>().join(", ")
                    ),
                ),
            }
        }
        for id in identity_ids.intersection(&plain_ids) {
            push("compilers".into(), format!("compiler `{id}` is flagged identity on some devices only"));
        }

        if self.models.is_empty() {
            push("models".into(), "at least one model is required".into());
        }
        let mut keys = BTreeSet::new();
        for (i, m) in self.models.iter().enumerate() {
            match &m.variant {
                ModelVariant::Catalog(name) if name.is_empty() => {
                    push(format!("models[{i}].catalog"), "must be nonempty".into())
                }
                ModelVariant::BlockStack(b) => {
                    if b.width == 0 {
                        push(format!("models[{i}].block.width"), "must be >= 1".into());
                    }
                    if b.depth == 0 {
                        push(format!("models[{i}].block.depth"), "must be >= 1".into());
                    }
                }
                ModelVariant::Catalog(_) => {}
            }
            if m.input_shape.is_empty() {
                push(format!("models[{i}].input_shape"), "must be nonempty".into());
            }
            for (k, dim) in m.input_shape.iter().enumerate() {
                if *dim == 0 {
                    push(format!("models[{i}].input_shape[{k}]"), "must be >= 1".into());
                }
            }
            if !keys.insert(m.key()) {
                push(format!("models[{i}]"), format!("duplicate model `{}`", m.key()));
            }
        }

        if self.batch_sizes.is_empty() {
            push("batch_sizes".into(), "at least one batch size is required".into());
        }
        for (i, b) in self.batch_sizes.iter().enumerate() {
            if *b == 0 {
                push(format!("batch_sizes[{i}]"), "must be >= 1".into());
            }
        }
        if self.batch_sizes.windows(2).any(|w| w[1] <= w[0]) {
            push("batch_sizes".into(), "must be strictly increasing".into());
        }
        if self.scaling_metrics && !self.batch_sizes.contains(&1) {
            push(
                "batch_sizes".into(),
                "must contain 1 when scaling_metrics is enabled (RTR/ASE/BSR divide by T(1))".into(),
            );
        }

        if self.repetitions == 0 {
            push("repetitions".into(), "must be >= 1".into());
        }
        if self.checkpoint_every == 0 {
            push("checkpoint_every".into(), "must be >= 1".into());
        }
        if self.cpu_sample_interval_ms == 0 {
            push("cpu_sample_interval_ms".into(), "must be >= 1".into());
        }
        if self.timeouts.init_s == 0 {
            push("timeouts.init_s".into(), "must be >= 1".into());
        }
        if self.timeouts.bench_s == 0 {
            push("timeouts.bench_s".into(), "must be >= 1".into());
        }

        if out.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { violations: out })
        }
    }
}

/// One atomic unit of work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTask {
    pub task_id: String,
    pub device_id: String,
    pub compiler_id: String,
    pub is_identity: bool,
    pub flags: BTreeMap<String, String>,
    pub model: ModelSpec,
    pub batch_size: u32,
    pub repetitions: u32,
    pub warmup: u32,
}

const ID_SEP: char = '|';

fn escape_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '%' => out.push_str("%25"),
            '|' => out.push_str("%7C"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_component(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('%') {
        out.push_str(&rest[..pos]);
        let code = rest.get(pos + 1..pos + 3)?;
        match code {
            "25" => out.push('%'),
            "7C" => out.push('|'),
            _ => return None,
        }
        rest = &rest[pos + 3..];
    }
    out.push_str(rest);
    Some(out)
}

/// Builds the deterministic task id
/// `<device>|<compiler>|<model key>|b<batch>|<model digest>`.
///
/// `%` and `|` inside components are percent-escaped so the encoding is
/// injective for arbitrary names.
pub fn make_task_id(device_id: &str, compiler_id: &str, model: &ModelSpec, batch_size: u32) -> String {
    format!(
        "{}{ID_SEP}{}{ID_SEP}{}{ID_SEP}b{batch_size}{ID_SEP}{}",
        escape_component(device_id),
        escape_component(compiler_id),
        escape_component(&model.key()),
        model.digest()
    )
}

/// Coordinates recovered from a task id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskCoords {
    pub device_id: String,
    pub compiler_id: String,
    pub model_key: String,
    pub batch_size: u32,
    pub model_digest: String,
}

pub fn parse_task_id(id: &str) -> Option<TaskCoords> {
    let parts: Vec<&str> = id.split(ID_SEP).collect();
    let [device, compiler, model, batch, digest] = parts.as_slice() else {
        return None;
    };
    let batch_size = batch.strip_prefix('b')?.parse().ok()?;
    if digest.len() != 8 || !digest.chars().all(|c| c.is_ascii_hexdigit()) {
        return None;
    }
    Some(TaskCoords {
        device_id: unescape_component(device)?,
        compiler_id: unescape_component(compiler)?,
        model_key: unescape_component(model)?,
        batch_size,
        model_digest: digest.to_string(),
    })
}

/// Expands a validated plan into one task per
/// (device, compiler on that device, model, batch size), sorted by task id.
pub fn expand_plan(plan: &ExperimentPlan) -> Vec<BenchTask> {
    let mut tasks = Vec::new();
    for device in &plan.devices {
        let Some(compilers) = plan.compilers.get(&device.id) else {
            continue;
        };
        for compiler in compilers {
            for model in &plan.models {
                for &batch_size in &plan.batch_sizes {
                    tasks.push(BenchTask {
                        task_id: make_task_id(&device.id, &compiler.id, model, batch_size),
                        device_id: device.id.clone(),
                        compiler_id: compiler.id.clone(),
                        is_identity: compiler.identity,
                        flags: compiler.flags.clone(),
                        model: model.clone(),
                        batch_size,
                        repetitions: plan.repetitions,
                        warmup: plan.warmup,
                    });
                }
            }
        }
    }
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    tasks
}

/// Raw output of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub task_id: String,
    /// Samples per second, one per repetition.
    pub throughput_samples: Vec<f64>,
    /// System CPU utilization percentages sampled inside the bench window.
    pub cpu_samples: Vec<f64>,
    pub compile_time_s: f64,
    pub wall_start: DateTime<Utc>,
    pub wall_end: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasurementError {
    #[error("expected {expected} throughput samples, got {actual}")]
    SampleCount { expected: usize, actual: usize },
    #[error("throughput sample {index} is not a positive finite number ({value})")]
    NonPositiveThroughput { index: usize, value: f64 },
    #[error("cpu sample {index} is outside [0, 100] ({value})")]
    CpuOutOfRange { index: usize, value: f64 },
    #[error("compile time must be a nonnegative finite number ({0})")]
    CompileTime(f64),
}

impl Measurement {
    pub fn validate(&self, repetitions: u32) -> Result<(), MeasurementError> {
        if self.throughput_samples.len() != repetitions as usize {
            return Err(MeasurementError::SampleCount {
                expected: repetitions as usize,
                actual: self.throughput_samples.len(),
            });
        }
        for (index, &value) in self.throughput_samples.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(MeasurementError::NonPositiveThroughput { index, value });
            }
        }
        for (index, &value) in self.cpu_samples.iter().enumerate() {
            if !(0.0..=100.0).contains(&value) {
                return Err(MeasurementError::CpuOutOfRange { index, value });
            }
        }
        if !(self.compile_time_s.is_finite() && self.compile_time_s >= 0.0) {
            return Err(MeasurementError::CompileTime(self.compile_time_s));
        }
        Ok(())
    }
}

/// A task that produced no measurement, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskFailure {
    pub task_id: String,
    pub device_id: String,
    pub cause: String,
}

/// Aggregated statistics for one task, keyed by its coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub task_id: String,
    pub device_id: String,
    pub compiler_id: String,
    pub is_identity: bool,
    pub model_key: String,
    pub batch_size: u32,
    pub throughput_mean: f64,
    pub throughput_std: f64,
    /// Absent when no CPU sample fell inside the bench window.
    pub cpu_mean: Option<f64>,
    pub cpu_std: Option<f64>,
    pub compile_time_s: f64,
    #[serde(default)]
    pub throughput_samples: Vec<f64>,
    #[serde(default)]
    pub cpu_samples: Vec<f64>,
}

impl ResultRecord {
    /// Aggregates a measurement against the task that produced it.
    pub fn from_measurement(task: &BenchTask, m: &Measurement) -> Result<Self, MeasurementError> {
        m.validate(task.repetitions)?;
        let throughput = metrics::aggregate(&m.throughput_samples)
            .expect("validated measurement has at least one sample");
        let cpu = metrics::aggregate(&m.cpu_samples).ok();
        Ok(Self {
            task_id: task.task_id.clone(),
            device_id: task.device_id.clone(),
            compiler_id: task.compiler_id.clone(),
            is_identity: task.is_identity,
            model_key: task.model.key(),
            batch_size: task.batch_size,
            throughput_mean: throughput.mean,
            throughput_std: throughput.std,
            cpu_mean: cpu.map(|s| s.mean),
            cpu_std: cpu.map(|s| s.std),
            compile_time_s: m.compile_time_s,
            throughput_samples: m.throughput_samples.clone(),
            cpu_samples: m.cpu_samples.clone(),
        })
    }
}
