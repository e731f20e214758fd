//! Per-device session driver and plan-level orchestration.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use super::journal::{Direction, Journal, JournalEntry};
use super::state::{DevicePhase, SessionState};
use super::store::{Conflict, ResultStore, StoreError};
use crate::archive::ResultsArchive;
use crate::model::{expand_plan, BenchTask, ExperimentPlan, ResultRecord, TaskFailure, ValidationError};
use crate::wire::{Envelope, WireConn, WireError, WireMessage, TOOL_VERSION, WIRE_PROTOCOL_VERSION};

#[derive(Debug, Clone)]
pub struct CoordinatorConfig {
    /// Where the journal and result store live; `None` keeps both in memory.
    pub state_dir: Option<PathBuf>,
    pub connect_timeout: Duration,
    /// Deadline for the hello and teardown replies.
    pub handshake_timeout: Duration,
    /// Longest silence tolerated while a device is running. `None` derives
    /// it from the plan's adapter timeouts.
    pub idle_timeout: Option<Duration>,
    /// Consecutive failed connection attempts before a device is given up.
    pub reconnect_attempts: u32,
    pub reconnect_delay: Duration,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        Self {
            state_dir: None,
            connect_timeout: Duration::from_secs(5),
            handshake_timeout: Duration::from_secs(30),
            idle_timeout: None,
            reconnect_attempts: 3,
            reconnect_delay: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error("invalid plan: {0}")]
    InvalidPlan(#[from] ValidationError),
    #[error("no device reachable{}", fmt_causes(.0))]
    NoDevicesReachable(BTreeMap<String, String>),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("journal: {0}")]
    Journal(std::io::Error),
}

fn fmt_causes(causes: &BTreeMap<String, String>) -> String {
    causes.iter().map(|(d, c)| format!("; {d}: {c}")).collect()
}

#[derive(Debug)]
pub struct RunOutcome {
    pub archive: ResultsArchive,
    /// Devices that ended in `Failed`, with the cause.
    pub device_failures: BTreeMap<String, String>,
    pub conflicts: Vec<Conflict>,
    pub phases: BTreeMap<String, DevicePhase>,
    pub journal: Vec<JournalEntry>,
}

impl RunOutcome {
    /// Some device failed; the archive still holds every collected record.
    pub fn is_partial(&self) -> bool {
        !self.device_failures.is_empty()
    }
}

/// Each device's task subset; devices without compilers get an empty list.
pub fn partition(plan: &ExperimentPlan) -> BTreeMap<String, Vec<BenchTask>> {
    let mut out: BTreeMap<String, Vec<BenchTask>> =
        plan.devices.iter().map(|d| (d.id.clone(), Vec::new())).collect();
    for task in expand_plan(plan) {
        out.entry(task.device_id.clone()).or_default().push(task);
    }
    out
}

pub fn journal_path(state_dir: &Path, plan_id: &str) -> PathBuf {
    state_dir.join(format!("{plan_id}.journal.jsonl"))
}

pub fn store_path(state_dir: &Path, plan_id: &str) -> PathBuf {
    state_dir.join(format!("{plan_id}.results.jsonl"))
}

struct Inner {
    state: SessionState,
    store: ResultStore,
    journal: Journal,
    conflicts: Vec<Conflict>,
    reached: BTreeSet<String>,
    journal_error: Option<std::io::Error>,
}

impl Inner {
    fn log(&mut self, entry: JournalEntry) {
        if let Err(e) = self.journal.append(entry) {
            self.journal_error.get_or_insert(e);
        }
    }

    fn set_phase(&mut self, device: &str, to: DevicePhase) {
        match self.state.transition(device, to.clone()) {
            Ok(()) => self.log(JournalEntry::Phase { device: device.to_string(), phase: to }),
            Err(e) => tracing::debug!("{e}"),
        }
    }
}

struct Shared {
    inner: Mutex<Inner>,
    settled: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn set_phase(&self, device: &str, to: DevicePhase) {
        self.lock().set_phase(device, to);
        self.settled.notify_all();
    }

    fn phase(&self, device: &str) -> DevicePhase {
        self.lock().state.phase(device).cloned().unwrap_or(DevicePhase::Unreached)
    }

    fn wait_until_settled(&self) {
        let mut inner = self.lock();
        while !inner.state.teardown_allowed() {
            inner = self.settled.wait(inner).unwrap_or_else(|p| p.into_inner());
        }
    }
}

pub struct Coordinator {
    config: CoordinatorConfig,
}

/// How one connection attempt to a device ended.
enum Attempt {
    /// Session ran to teardown (or the device failed and was torn down).
    Done,
    /// The link broke; worth reconnecting. `progressed` resets the retry budget.
    Retry { cause: String, progressed: bool },
    Fatal(String),
}

struct DeviceCtx<'a> {
    shared: &'a Shared,
    plan: &'a ExperimentPlan,
    device: &'a str,
    address: &'a str,
    tasks: &'a [BenchTask],
    config: &'a CoordinatorConfig,
    idle: Duration,
}

impl Coordinator {
    pub fn new(config: CoordinatorConfig) -> Self {
        Self { config }
    }

    /// Runs a plan from scratch, discarding any earlier journal and store.
    pub fn run_plan(&self, plan: &ExperimentPlan) -> Result<RunOutcome, CoordinatorError> {
        if let Some(dir) = &self.config.state_dir {
            for path in [journal_path(dir, &plan.plan_id), store_path(dir, &plan.plan_id)] {
                match fs::remove_file(&path) {
                    Err(e) if e.kind() != std::io::ErrorKind::NotFound => {
                        return Err(CoordinatorError::Journal(e))
                    }
                    _ => {}
                }
            }
        }
        self.execute(plan, false)
    }

    /// Continues a plan after a coordinator restart: devices the journal shows
    /// as torn down are not contacted again and results already in the store
    /// are kept; the rest are redeployed and resume from their checkpoints.
    pub fn resume_plan(&self, plan: &ExperimentPlan) -> Result<RunOutcome, CoordinatorError> {
        self.execute(plan, true)
    }

    fn execute(&self, plan: &ExperimentPlan, resumed: bool) -> Result<RunOutcome, CoordinatorError> {
        plan.validate()?;
        if plan.devices.is_empty() {
            return Err(CoordinatorError::NoDevicesReachable(BTreeMap::new()));
        }
        let (store, mut journal) = match &self.config.state_dir {
            Some(dir) => (
                ResultStore::open(&store_path(dir, &plan.plan_id))?,
                Journal::open(&journal_path(dir, &plan.plan_id)).map_err(CoordinatorError::Journal)?,
            ),
            None => (ResultStore::in_memory(), Journal::in_memory()),
        };
        let finished: BTreeSet<String> = if resumed {
            journal
                .last_phases()
                .into_iter()
                .filter(|(_, p)| *p == DevicePhase::TornDown)
                .map(|(d, _)| d)
                .collect()
        } else {
            BTreeSet::new()
        };
        journal
            .append(JournalEntry::Run { plan_id: plan.plan_id.clone(), resumed })
            .map_err(CoordinatorError::Journal)?;

        let pending: Vec<&str> =
            plan.devices.iter().map(|d| d.id.as_str()).filter(|d| !finished.contains(*d)).collect();
        let mut inner = Inner {
            state: SessionState::new(&plan.plan_id, pending.iter().copied()),
            store,
            journal,
            conflicts: Vec::new(),
            reached: finished.clone(),
            journal_error: None,
        };
        for d in &pending {
            inner.log(JournalEntry::Phase { device: d.to_string(), phase: DevicePhase::Unreached });
        }
        let shared = Shared { inner: Mutex::new(inner), settled: Condvar::new() };
        let parts = partition(plan);
        let idle = self.config.idle_timeout.unwrap_or_else(|| {
            Duration::from_secs(plan.timeouts.init_s + 2 * plan.timeouts.bench_s + 60)
        });

        thread::scope(|scope| {
            for device in &plan.devices {
                if finished.contains(&device.id) {
                    continue;
                }
                let ctx = DeviceCtx {
                    shared: &shared,
                    plan,
                    device: &device.id,
                    address: &device.address,
                    tasks: &parts[&device.id],
                    config: &self.config,
                    idle,
                };
                scope.spawn(move || drive_device(&ctx));
            }
        });

        let mut inner = shared.inner.into_inner().unwrap_or_else(|p| p.into_inner());
        if let Some(e) = inner.journal_error.take() {
            return Err(CoordinatorError::Journal(e));
        }
        let mut phases = inner.state.phases.clone();
        for d in &finished {
            phases.insert(d.clone(), DevicePhase::TornDown);
        }
        let device_failures: BTreeMap<String, String> = phases
            .iter()
            .filter_map(|(d, p)| match p {
                DevicePhase::Failed { cause } => Some((d.clone(), cause.clone())),
                _ => None,
            })
            .collect();
        if inner.reached.is_empty() {
            return Err(CoordinatorError::NoDevicesReachable(device_failures));
        }

        let mut records = Vec::new();
        let mut failures = Vec::new();
        for task in parts.values().flatten() {
            match inner.store.measurement(&task.task_id) {
                Some(m) => match ResultRecord::from_measurement(task, m) {
                    Ok(r) => records.push(r),
                    Err(e) => failures.push(TaskFailure {
                        task_id: task.task_id.clone(),
                        device_id: task.device_id.clone(),
                        cause: format!("invalid measurement: {e}"),
                    }),
                },
                None => {
                    let cause = inner
                        .store
                        .failure(&task.task_id)
                        .map(|f| f.cause.clone())
                        .or_else(|| device_failures.get(&task.device_id).map(|c| format!("device failed: {c}")))
                        .unwrap_or_else(|| "no result reported".into());
                    failures.push(TaskFailure {
                        task_id: task.task_id.clone(),
                        device_id: task.device_id.clone(),
                        cause,
                    });
                }
            }
        }
        Ok(RunOutcome {
            archive: ResultsArchive::new(plan.clone(), records, failures),
            device_failures,
            conflicts: inner.conflicts,
            phases,
            journal: inner.journal.entries().to_vec(),
        })
    }
}

fn drive_device(ctx: &DeviceCtx<'_>) {
    let mut budget = ctx.config.reconnect_attempts;
    loop {
        let cause = match attempt(ctx) {
            Attempt::Done => return,
            Attempt::Fatal(cause) => cause,
            Attempt::Retry { cause, progressed } => {
                if progressed {
                    budget = ctx.config.reconnect_attempts;
                }
                if budget > 0 {
                    budget -= 1;
                    tracing::info!(device = ctx.device, "{cause}; reconnecting");
                    thread::sleep(ctx.config.reconnect_delay);
                    continue;
                }
                cause
            }
        };
        tracing::warn!(device = ctx.device, "giving up: {cause}");
        ctx.shared.set_phase(ctx.device, DevicePhase::Failed { cause });
        return;
    }
}

fn connect(address: &str, timeout: Duration) -> std::io::Result<TcpStream> {
    let mut last = None;
    for addr in address.to_socket_addrs()? {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| std::io::Error::other("address resolved to nothing")))
}

struct Link<'a, 'c> {
    ctx: &'a DeviceCtx<'c>,
    conn: WireConn,
}

impl Link<'_, '_> {
    fn send(&mut self, body: WireMessage) -> Result<Envelope, WireError> {
        let env = self.conn.send(body)?;
        self.ctx.shared.lock().log(JournalEntry::message(self.ctx.device, Direction::Sent, &env));
        Ok(env)
    }

    /// Next in-order message; replays and foreign-plan messages are Nacked.
    fn recv(&mut self) -> Result<WireMessage, WireError> {
        loop {
            match self.conn.recv() {
                Ok(env) => {
                    self.ctx.shared.lock().log(JournalEntry::message(self.ctx.device, Direction::Received, &env));
                    return Ok(env.body);
                }
                Err(e) if !e.is_fatal() => {
                    tracing::warn!(device = self.ctx.device, "{e}");
                    self.send(WireMessage::Nack { reason: e.to_string() })?;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn timeout(&self, t: Duration) {
        let _ = self.conn.set_read_timeout(Some(t));
    }
}

fn attempt(ctx: &DeviceCtx<'_>) -> Attempt {
    let stream = match connect(ctx.address, ctx.config.connect_timeout) {
        Ok(s) => s,
        Err(e) => return Attempt::Retry { cause: format!("unreachable at {}: {e}", ctx.address), progressed: false },
    };
    let mut link = Link { ctx, conn: WireConn::new(stream, ctx.plan.plan_id.clone()) };
    let mut progressed = false;
    let result = session(&mut link, &mut progressed);
    link.conn.shutdown();
    match result {
        Ok(a) => a,
        Err(WireError::Timeout) if progressed || ctx.shared.phase(ctx.device) != DevicePhase::Unreached => {
            Attempt::Fatal("upload timeout: device went silent".into())
        }
        Err(e) => Attempt::Retry { cause: format!("connection lost: {e}"), progressed },
    }
}

fn session(link: &mut Link<'_, '_>, progressed: &mut bool) -> Result<Attempt, WireError> {
    let ctx = link.ctx;
    link.timeout(ctx.config.handshake_timeout);
    link.send(WireMessage::Hello { agent_version: TOOL_VERSION.into(), protocol: WIRE_PROTOCOL_VERSION })?;
    match link.recv()? {
        WireMessage::Hello { protocol, .. } if protocol == WIRE_PROTOCOL_VERSION => {}
        WireMessage::Hello { protocol, .. } => {
            return Ok(Attempt::Fatal(format!("agent speaks protocol {protocol}, expected {WIRE_PROTOCOL_VERSION}")))
        }
        other => return Ok(Attempt::Fatal(format!("expected hello, got {}", other.kind()))),
    }
    ctx.shared.lock().reached.insert(ctx.device.to_string());
    *progressed = true;

    let phase = ctx.shared.phase(ctx.device);
    if !phase.is_settled() {
        link.send(WireMessage::DeployPlan {
            plan: ctx.plan.clone(),
            tasks: ctx.tasks.iter().map(|t| t.task_id.clone()).collect(),
        })?;
        match link.recv()? {
            WireMessage::Ack => {
                if phase == DevicePhase::Unreached {
                    ctx.shared.set_phase(ctx.device, DevicePhase::Deployed);
                }
            }
            WireMessage::Nack { reason } => {
                ctx.shared.set_phase(ctx.device, DevicePhase::Failed { cause: format!("deploy rejected: {reason}") });
            }
            other => {
                return Ok(Attempt::Fatal(format!("expected ack to deploy_plan, got {}", other.kind())));
            }
        }
    }

    if !ctx.shared.phase(ctx.device).is_settled() {
        link.timeout(ctx.idle);
        collect(link)?;
    }

    ctx.shared.wait_until_settled();
    link.timeout(ctx.config.handshake_timeout);
    link.send(WireMessage::Teardown)?;
    if ctx.shared.phase(ctx.device) == DevicePhase::Reported {
        ctx.shared.set_phase(ctx.device, DevicePhase::TornDown);
    }
    match link.recv() {
        Ok(WireMessage::Ack) => {}
        Ok(other) => tracing::warn!(device = ctx.device, "teardown answered with {}", other.kind()),
        Err(e) => tracing::warn!(device = ctx.device, "no teardown ack: {e}"),
    }
    Ok(Attempt::Done)
}

/// Receives progress and uploads until the final upload arrives.
fn collect(link: &mut Link<'_, '_>) -> Result<(), WireError> {
    let ctx = link.ctx;
    let assigned: BTreeMap<&str, &BenchTask> = ctx.tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    loop {
        match link.recv()? {
            WireMessage::Progress { completed, total, current } => {
                tracing::info!(device = ctx.device, completed, total, current = current.as_deref().unwrap_or("-"));
                mark_running(ctx);
            }
            WireMessage::ResultsUpload { measurements, failures, final_upload } => {
                mark_running(ctx);
                let rejected = ingest(ctx, &assigned, measurements, failures);
                if rejected.is_empty() {
                    link.send(WireMessage::Ack)?;
                } else {
                    link.send(WireMessage::Nack { reason: rejected.join("; ") })?;
                }
                if final_upload {
                    ctx.shared.set_phase(ctx.device, DevicePhase::Reported);
                    return Ok(());
                }
            }
            other => {
                link.send(WireMessage::Nack { reason: format!("unexpected {}", other.kind()) })?;
            }
        }
    }
}

fn mark_running(ctx: &DeviceCtx<'_>) {
    if ctx.shared.phase(ctx.device) == DevicePhase::Deployed {
        ctx.shared.set_phase(ctx.device, DevicePhase::Running);
    }
}

fn ingest(
    ctx: &DeviceCtx<'_>,
    assigned: &BTreeMap<&str, &BenchTask>,
    measurements: Vec<crate::model::Measurement>,
    failures: Vec<TaskFailure>,
) -> Vec<String> {
    let mut conflicts = Vec::new();
    let mut errors = Vec::new();
    let mut inner = ctx.shared.lock();
    let conflict = |task_id: String, reason: String| Conflict { task_id, device_id: ctx.device.to_string(), reason };
    for m in measurements {
        let Some(task) = assigned.get(m.task_id.as_str()) else {
            conflicts.push(conflict(m.task_id, "task not assigned to this device".into()));
            continue;
        };
        if let Err(e) = m.validate(task.repetitions) {
            conflicts.push(conflict(m.task_id, format!("invalid measurement: {e}")));
            continue;
        }
        match inner.store.insert(ctx.device, m) {
            Ok(Ok(_)) => {}
            Ok(Err(c)) => conflicts.push(c),
            Err(e) => {
                tracing::error!("{e}");
                errors.push(e.to_string());
            }
        }
    }
    for f in failures {
        if !assigned.contains_key(f.task_id.as_str()) {
            conflicts.push(conflict(f.task_id, "task not assigned to this device".into()));
            continue;
        }
        let f = TaskFailure { device_id: ctx.device.to_string(), ..f };
        if let Err(e) = inner.store.record_failure(f) {
            tracing::error!("{e}");
            errors.push(e.to_string());
        }
    }
    let mut rejected: Vec<String> = conflicts.iter().map(|c| format!("{}: {}", c.task_id, c.reason)).collect();
    rejected.extend(errors);
    inner.conflicts.extend(conflicts);
    rejected
}
