//! Device-resident runner: executes assigned tasks through adapter sessions,
//! samples CPU load, checkpoints and uploads results.

pub mod checkpoint;
pub mod cpu;
pub mod daemon;
pub mod executor;
pub mod runner;

pub use checkpoint::{
    checkpoint_path, load_checkpoint, remaining_tasks, resume, write_checkpoint, Checkpoint, CheckpointError,
};
pub use cpu::{CpuMonitor, CpuWindow, FixedCpuMonitor, SystemCpuMonitor};
pub use daemon::{AgentConfig, AgentDaemon, AgentHandle, SessionEnd};
pub use executor::{execute_task, ExecutionSettings, TaskError};
pub use runner::{run_tasks, CrashPoint, Progress, RunnerError, RunnerOptions};
