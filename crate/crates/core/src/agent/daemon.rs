//! The listening agent: one coordinator session at a time over the framed
//! wire protocol.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::checkpoint::{checkpoint_path, load_checkpoint, remaining_tasks, Checkpoint, CheckpointError};
use super::cpu::CpuMonitor;
use super::executor::ExecutionSettings;
use super::runner::{run_tasks, CrashPoint, RunnerError, RunnerOptions};
use crate::adapter::{AdapterLauncher, PhaseTimeouts};
use crate::model::{expand_plan, BenchTask, ExperimentPlan, TaskFailure};
use crate::wire::{WireConn, WireError, WireMessage, TOOL_VERSION, WIRE_PROTOCOL_VERSION};

#[derive(Clone)]
pub struct AgentConfig {
    pub state_dir: PathBuf,
    pub launcher: Arc<dyn AdapterLauncher>,
    pub cpu: Arc<dyn CpuMonitor>,
    /// Read timeout while waiting on the coordinator between phases.
    pub idle_timeout: Option<Duration>,
    /// Test hook: die after this many tasks of the first session that runs any.
    pub crash: Option<CrashPoint>,
}

impl AgentConfig {
    pub fn new(state_dir: impl Into<PathBuf>, launcher: Arc<dyn AdapterLauncher>, cpu: Arc<dyn CpuMonitor>) -> Self {
        Self { state_dir: state_dir.into(), launcher, cpu, idle_timeout: None, crash: None }
    }
}

/// How a single coordinator session ended.
#[derive(Debug)]
pub enum SessionEnd {
    TornDown,
    /// The coordinator went away; the checkpoint is kept for the next session.
    Disconnected(WireError),
    Rejected(String),
    Killed,
}

pub struct AgentDaemon {
    listener: TcpListener,
    config: AgentConfig,
    stop: Arc<AtomicBool>,
}

pub struct AgentHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl AgentHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Whether the serving thread has exited (stopped or killed).
    pub fn is_finished(&self) -> bool {
        self.thread.as_ref().is_none_or(JoinHandle::is_finished)
    }

    pub fn stop(mut self) -> io::Result<()> {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        self.join_inner()
    }

    /// Waits for the daemon to exit on its own, e.g. after a simulated kill.
    pub fn join(mut self) -> io::Result<()> {
        self.join_inner()
    }

    fn join_inner(&mut self) -> io::Result<()> {
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(io::Error::other("agent thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for AgentHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect(self.addr);
            let _ = self.join_inner();
        }
    }
}

impl AgentDaemon {
    pub fn bind(addr: impl std::net::ToSocketAddrs, config: AgentConfig) -> io::Result<Self> {
        Ok(Self { listener: TcpListener::bind(addr)?, config, stop: Arc::new(AtomicBool::new(false)) })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn spawn(self) -> io::Result<AgentHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let thread = thread::Builder::new().name(format!("agent-{addr}")).spawn(move || self.serve())?;
        Ok(AgentHandle { addr, stop, thread: Some(thread) })
    }

    /// Serves sessions until stopped or killed.
    pub fn serve(mut self) -> io::Result<()> {
        tracing::info!(addr = %self.listener.local_addr()?, "agent listening");
        for stream in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    tracing::warn!("accept: {e}");
                    continue;
                }
            };
            let end = handle_session(stream, &self.config);
            tracing::info!("session ended: {end:?}");
            match end {
                SessionEnd::Killed => break,
                _ if self.stop.load(Ordering::SeqCst) => break,
                _ => {}
            }
            if self.config.crash.is_some() && !matches!(end, SessionEnd::Rejected(_)) {
                self.config.crash = None;
            }
        }
        Ok(())
    }
}

fn recv(conn: &mut WireConn) -> Result<WireMessage, WireError> {
    loop {
        match conn.recv() {
            Ok(env) => return Ok(env.body),
            Err(e) if !e.is_fatal() => {
                conn.send(WireMessage::Nack { reason: e.to_string() })?;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Runs one coordinator session to completion.
pub fn handle_session(stream: TcpStream, config: &AgentConfig) -> SessionEnd {
    let mut conn = WireConn::new(stream, "");
    let _ = conn.set_read_timeout(config.idle_timeout);
    match session(&mut conn, config) {
        Ok(end) => end,
        Err(e) => SessionEnd::Disconnected(e),
    }
}

fn session(conn: &mut WireConn, config: &AgentConfig) -> Result<SessionEnd, WireError> {
    let hello = conn.recv()?;
    let WireMessage::Hello { protocol, .. } = hello.body else {
        let reason = format!("expected hello, got {}", hello.body.kind());
        conn.send(WireMessage::Nack { reason: reason.clone() })?;
        return Ok(SessionEnd::Rejected(reason));
    };
    conn.set_plan_id(hello.plan_id);
    conn.send(WireMessage::Hello { agent_version: TOOL_VERSION.into(), protocol: WIRE_PROTOCOL_VERSION })?;
    if protocol != WIRE_PROTOCOL_VERSION {
        return Ok(SessionEnd::Rejected(format!("protocol {protocol} unsupported")));
    }

    let (plan, assigned) = match recv(conn)? {
        WireMessage::DeployPlan { plan, tasks } => (plan, tasks),
        WireMessage::Teardown => {
            conn.send(WireMessage::Ack)?;
            return Ok(SessionEnd::TornDown);
        }
        other => {
            let reason = format!("expected deploy_plan, got {}", other.kind());
            conn.send(WireMessage::Nack { reason: reason.clone() })?;
            return Ok(SessionEnd::Rejected(reason));
        }
    };
    let (tasks, mut checkpoint) = match prepare(&plan, &assigned, config, conn.plan_id()) {
        Ok(ok) => ok,
        Err(reason) => {
            conn.send(WireMessage::Nack { reason: reason.clone() })?;
            return Ok(await_teardown(conn, config, &plan.plan_id, SessionEnd::Rejected(reason)));
        }
    };
    conn.send(WireMessage::Ack)?;

    let path = checkpoint_path(&config.state_dir, &plan.plan_id);
    let opts = RunnerOptions {
        checkpoint_path: &path,
        checkpoint_every: plan.checkpoint_every,
        settings: ExecutionSettings {
            timeouts: PhaseTimeouts::from(plan.timeouts),
            cpu_interval: Duration::from_millis(plan.cpu_sample_interval_ms),
        },
        crash: config.crash,
    };
    // Progress is advisory; a dead link must not stop the benchmark.
    let mut link_up = true;
    let result = run_tasks(
        config.launcher.as_ref(),
        config.cpu.as_ref(),
        &tasks,
        &mut checkpoint,
        &opts,
        &mut |p| {
            if link_up {
                let msg = WireMessage::Progress { completed: p.completed, total: p.total, current: p.current.clone() };
                link_up = conn.send(msg).is_ok();
            }
        },
    );
    match result {
        Ok(()) => {}
        Err(RunnerError::Killed(_)) => {
            conn.shutdown();
            return Ok(SessionEnd::Killed);
        }
        Err(RunnerError::Checkpoint(e)) => {
            let reason = format!("checkpoint: {e}");
            conn.send(WireMessage::Nack { reason: reason.clone() })?;
            return Ok(SessionEnd::Rejected(reason));
        }
    }

    let device_of = |id: &str| tasks.iter().find(|t| t.task_id == id).map(|t| t.device_id.clone());
    let failures = checkpoint
        .failed
        .iter()
        .map(|(id, cause)| TaskFailure {
            task_id: id.clone(),
            device_id: device_of(id).unwrap_or_default(),
            cause: cause.clone(),
        })
        .collect();
    conn.send(WireMessage::ResultsUpload {
        measurements: checkpoint.completed.values().cloned().collect(),
        failures,
        final_upload: true,
    })?;
    match recv(conn)? {
        WireMessage::Ack => {}
        WireMessage::Nack { reason } => tracing::warn!("upload rejected: {reason}"),
        other => tracing::warn!("unexpected {} after upload", other.kind()),
    }
    Ok(await_teardown(conn, config, &plan.plan_id, SessionEnd::TornDown))
}

fn await_teardown(conn: &mut WireConn, config: &AgentConfig, plan_id: &str, end: SessionEnd) -> SessionEnd {
    loop {
        match recv(conn) {
            Ok(WireMessage::Teardown) => {
                if matches!(end, SessionEnd::TornDown) {
                    let path = checkpoint_path(&config.state_dir, plan_id);
                    if let Err(e) = fs::remove_file(&path) {
                        if e.kind() != io::ErrorKind::NotFound {
                            tracing::warn!("removing {}: {e}", path.display());
                        }
                    }
                }
                let _ = conn.send(WireMessage::Ack);
                return end;
            }
            Ok(other) => {
                let _ = conn.send(WireMessage::Nack { reason: format!("expected teardown, got {}", other.kind()) });
            }
            Err(e) => return SessionEnd::Disconnected(e),
        }
    }
}

fn prepare(
    plan: &ExperimentPlan,
    assigned: &[String],
    config: &AgentConfig,
    session_plan: &str,
) -> Result<(Vec<BenchTask>, Checkpoint), String> {
    if plan.plan_id != session_plan {
        return Err(format!("plan `{}` deployed on a `{session_plan}` session", plan.plan_id));
    }
    plan.validate().map_err(|e| format!("invalid plan: {e}"))?;
    let wanted: BTreeSet<&str> = assigned.iter().map(String::as_str).collect();
    if wanted.len() != assigned.len() {
        return Err("duplicate task ids in assignment".into());
    }
    let tasks: Vec<BenchTask> =
        expand_plan(plan).into_iter().filter(|t| wanted.contains(t.task_id.as_str())).collect();
    if tasks.len() != wanted.len() {
        return Err("assignment names tasks outside the plan".into());
    }
    let path = checkpoint_path(&config.state_dir, &plan.plan_id);
    let checkpoint = match load_checkpoint(&path) {
        Ok(cp) => cp,
        Err(CheckpointError::Missing(_)) => Checkpoint::empty(&plan.plan_id, &tasks),
        Err(e) => return Err(format!("refusing to start: {e}")),
    };
    remaining_tasks(&plan.plan_id, &tasks, &checkpoint).map_err(|e| e.to_string())?;
    Ok((tasks, checkpoint))
}
