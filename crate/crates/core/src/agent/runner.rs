use std::path::Path;

use thiserror::Error;

use super::checkpoint::{remaining_tasks, write_checkpoint, Checkpoint, CheckpointError};
use super::cpu::CpuMonitor;
use super::executor::{execute_task, ExecutionSettings};
use crate::adapter::AdapterLauncher;
use crate::model::BenchTask;

/// Simulated process death after a number of tasks finished in this session.
/// Nothing is written after the crash point, so whatever the last periodic
/// checkpoint holds is what survives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrashPoint {
    pub after_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
    pub current: Option<String>,
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("agent killed after {0} tasks")]
    Killed(usize),
}

pub struct RunnerOptions<'a> {
    pub checkpoint_path: &'a Path,
    pub checkpoint_every: u32,
    pub settings: ExecutionSettings,
    pub crash: Option<CrashPoint>,
}

/// Executes every task of `tasks` not yet completed in `checkpoint`,
/// sequentially and in order. Failed tasks are recorded and do not stop the
/// run.
pub fn run_tasks(
    launcher: &dyn AdapterLauncher,
    cpu: &dyn CpuMonitor,
    tasks: &[BenchTask],
    checkpoint: &mut Checkpoint,
    opts: &RunnerOptions<'_>,
    progress: &mut dyn FnMut(&Progress),
) -> Result<(), RunnerError> {
    let plan_id = checkpoint.plan_id.clone();
    let remaining = remaining_tasks(&plan_id, tasks, checkpoint)?;
    let total = tasks.len();
    let every = opts.checkpoint_every.max(1) as usize;

    checkpoint.in_progress = remaining.first().map(|t| t.task_id.clone());
    save(opts.checkpoint_path, checkpoint)?;

    for (i, task) in remaining.iter().enumerate() {
        progress(&Progress {
            completed: checkpoint.completed.len(),
            total,
            current: Some(task.task_id.clone()),
        });
        match execute_task(launcher, cpu, task, opts.settings) {
            Ok(m) => {
                checkpoint.failed.remove(&task.task_id);
                checkpoint.completed.insert(task.task_id.clone(), m);
            }
            Err(e) => {
                tracing::warn!(task = %task.task_id, "{e}");
                checkpoint.failed.insert(task.task_id.clone(), e.cause());
            }
        }
        let done = i + 1;
        if done % every == 0 && done < remaining.len() {
            checkpoint.in_progress = remaining.get(done).map(|t| t.task_id.clone());
            save(opts.checkpoint_path, checkpoint)?;
        }
        if opts.crash.is_some_and(|c| c.after_tasks == done) {
            return Err(RunnerError::Killed(done));
        }
    }

    checkpoint.in_progress = None;
    save(opts.checkpoint_path, checkpoint)?;
    progress(&Progress { completed: checkpoint.completed.len(), total, current: None });
    Ok(())
}

fn save(path: &Path, checkpoint: &mut Checkpoint) -> Result<(), CheckpointError> {
    checkpoint.written_at = chrono::Utc::now();
    write_checkpoint(path, checkpoint)
}
