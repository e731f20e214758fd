use std::time::Duration;

use chrono::Utc;
use thiserror::Error;

use super::cpu::CpuMonitor;
use crate::adapter::{AdapterLauncher, AdapterSession, LaunchError, PhaseTimeouts};
use crate::model::{BenchTask, Measurement};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("no adapter installed for compiler `{0}`")]
    AdapterMissing(String),
    #[error("task {task_id} failed: {cause}")]
    TaskFailed { task_id: String, cause: String },
}

impl TaskError {
    pub fn cause(&self) -> String {
        match self {
            TaskError::AdapterMissing(c) => format!("no adapter installed for compiler `{c}`"),
            TaskError::TaskFailed { cause, .. } => cause.clone(),
        }
    }
}

/// Measurement settings shared by every task of a run.
#[derive(Debug, Clone, Copy)]
pub struct ExecutionSettings {
    pub timeouts: PhaseTimeouts,
    pub cpu_interval: Duration,
}

/// Runs one task in a fresh adapter session.
///
/// Warmup is a separate unsampled `bench` request; the measured `bench`
/// runs inside the CPU sampling window.
pub fn execute_task(
    launcher: &dyn AdapterLauncher,
    cpu: &dyn CpuMonitor,
    task: &BenchTask,
    settings: ExecutionSettings,
) -> Result<Measurement, TaskError> {
    let failed = |cause: String| TaskError::TaskFailed { task_id: task.task_id.clone(), cause };
    let transport = launcher.launch(&task.compiler_id).map_err(|e| match e {
        LaunchError::AdapterMissing(c) => TaskError::AdapterMissing(c),
        other => failed(other.to_string()),
    })?;
    let mut session =
        AdapterSession::open(transport, settings.timeouts).map_err(|e| failed(e.to_string()))?;
    let compile_time_s = session
        .init(&task.model, &task.compiler_id, &task.flags, task.batch_size)
        .map_err(|e| failed(e.to_string()))?;
    if task.warmup > 0 {
        session.bench(task.warmup, 0).map_err(|e| failed(format!("warmup: {e}")))?;
    }

    let window = cpu.start(settings.cpu_interval);
    let wall_start = Utc::now();
    let bench = session.bench(task.repetitions, 0);
    let wall_end = Utc::now();
    let cpu_samples = window.finish();
    let throughput_samples = bench.map_err(|e| failed(e.to_string()))?;

    if let Err(e) = session.shutdown() {
        tracing::warn!(task = %task.task_id, "adapter shutdown: {e}");
    }

    let measurement = Measurement {
        task_id: task.task_id.clone(),
        throughput_samples,
        cpu_samples,
        compile_time_s,
        wall_start,
        wall_end,
    };
    measurement.validate(task.repetitions).map_err(|e| failed(e.to_string()))?;
    Ok(measurement)
}
