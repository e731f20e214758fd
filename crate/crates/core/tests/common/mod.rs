#![allow(dead_code)]

pub mod fake;
pub mod oracle;
pub mod plans;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use chrono::TimeZone;
use graphbench_core::adapter::{synthetic_bench, AdapterLauncher, InProcessLauncher, SyntheticProfile};
use graphbench_core::agent::{AgentConfig, AgentDaemon, AgentHandle, CrashPoint, FixedCpuMonitor};
use graphbench_core::analysis::{analyze, AnalyzeOptions};
use graphbench_core::archive::ResultsArchive;
use graphbench_core::blockgen::BlockKind;
use graphbench_core::coordinator::CoordinatorConfig;
use graphbench_core::model::{expand_plan, CompilerSpec, DeviceSpec, ExperimentPlan, Measurement, ModelSpec, ResultRecord};
use graphbench_core::report::{render_report, ReportFormat};

/// Identity plus one compiler with a 2.5x overhead advantage that also
/// amortizes overhead over depth; saturates beyond batch 4.
pub fn profile() -> SyntheticProfile {
    let mut p = SyntheticProfile::new(0.02, 0.001);
    p.compiler_speedup.insert("fast".into(), 2.5);
    p.saturation_batch = Some(4.0);
    p.seed = 7;
    p.jitter = 0.05;
    p.compile_time_s.insert("fast".into(), 1.25);
    p.depth_discount.insert("fast".into(), 0.5);
    p
}

pub fn launcher() -> Arc<dyn AdapterLauncher> {
    Arc::new(InProcessLauncher::new(profile()))
}

pub fn cpu() -> Arc<FixedCpuMonitor> {
    Arc::new(FixedCpuMonitor(vec![40.0, 60.0]))
}

/// 2 devices x 2 compilers x 3 conv stacks (depth 1, 3, 6) x 4 batch sizes = 48 tasks.
pub fn plan_48(addrs: &[SocketAddr]) -> ExperimentPlan {
    let mut plan = ExperimentPlan::new("e2e");
    for (i, addr) in addrs.iter().enumerate() {
        let id = format!("dev{i}");
        plan.devices.push(DeviceSpec { id: id.clone(), address: addr.to_string(), labels: Default::default() });
        plan.compilers.insert(id, vec![CompilerSpec::identity("identity"), CompilerSpec::new("fast")]);
    }
    plan.models = [1, 3, 6].iter().map(|&d| ModelSpec::block(BlockKind::Conv, 64, d)).collect();
    plan.batch_sizes = vec![1, 2, 4, 8];
    plan.repetitions = 5;
    plan.warmup = 2;
    plan
}

pub fn spawn_agent(state_dir: &Path, launcher: Arc<dyn AdapterLauncher>, crash: Option<CrashPoint>) -> AgentHandle {
    spawn_agent_at("127.0.0.1:0", state_dir, launcher, crash)
}

pub fn spawn_agent_at(
    addr: &str,
    state_dir: &Path,
    launcher: Arc<dyn AdapterLauncher>,
    crash: Option<CrashPoint>,
) -> AgentHandle {
    let mut config = AgentConfig::new(state_dir, launcher, cpu());
    config.crash = crash;
    config.idle_timeout = Some(Duration::from_secs(20));
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        match AgentDaemon::bind(addr, config.clone()) {
            Ok(d) => return d.spawn().expect("spawn agent"),
            Err(e) if Instant::now() < deadline => {
                let _ = e;
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => panic!("bind {addr}: {e}"),
        }
    }
}

pub fn fast_coordinator(state_dir: Option<&Path>) -> CoordinatorConfig {
    CoordinatorConfig {
        state_dir: state_dir.map(Path::to_path_buf),
        connect_timeout: Duration::from_secs(2),
        handshake_timeout: Duration::from_secs(10),
        idle_timeout: Some(Duration::from_secs(20)),
        reconnect_attempts: 100,
        reconnect_delay: Duration::from_millis(20),
    }
}

/// Every analyze and report output for an archive, keyed by a file-like name.
/// Excludes the archive export, which carries timestamps and addresses.
pub fn rendered(archive: &ResultsArchive) -> Vec<(String, String)> {
    let opts = AnalyzeOptions::default();
    let analysis = analyze(archive, &opts).expect("analyze");
    let mut out = vec![
        ("analyze.table".to_string(), analysis.to_table()),
        ("analyze.csv".to_string(), analysis.to_csv()),
        ("analyze.json".to_string(), analysis.to_json()),
    ];
    for format in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg] {
        for (path, text) in render_report(archive, format, &opts).expect("report") {
            out.push((format!("{format:?}/{}", path.display()), text));
        }
    }
    out
}

/// The archive a run of `plan` against `profile` would produce, computed
/// offline from the synthetic model.
pub fn synthetic_archive(plan: &ExperimentPlan, profile: &SyntheticProfile) -> ResultsArchive {
    let at = chrono::Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let records = expand_plan(plan)
        .iter()
        .map(|t| {
            let m = Measurement {
                task_id: t.task_id.clone(),
                throughput_samples: synthetic_bench(profile, &t.compiler_id, &t.model, t.batch_size, t.repetitions, 1)
                    .unwrap(),
                cpu_samples: vec![40.0, 60.0],
                compile_time_s: profile.compile_time(&t.compiler_id),
                wall_start: at,
                wall_end: at,
            };
            ResultRecord::from_measurement(t, &m).unwrap()
        })
        .collect();
    ResultsArchive::new(plan.clone(), records, vec![])
}
