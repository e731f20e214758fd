use std::fs;
use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::Arc;

use graphbench_core::adapter::{InProcessLauncher, SyntheticProfile};
use graphbench_core::agent::{AgentConfig, AgentDaemon, AgentHandle, FixedCpuMonitor};
use graphbench_core::archive::read_archive;
use graphbench_core::blockgen::BlockKind;
use graphbench_core::config::serialize_plan;
use graphbench_core::model::{CompilerSpec, DeviceSpec, ExperimentPlan, ModelSpec};

fn graphbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphbench")).args(args).output().expect("run graphbench")
}

fn profile() -> SyntheticProfile {
    let mut p = SyntheticProfile::new(0.02, 0.001);
    p.compiler_speedup.insert("fast".into(), 2.0);
    p.saturation_batch = Some(2.0);
    p
}

fn agent(dir: &Path) -> AgentHandle {
    let config = AgentConfig::new(
        dir,
        Arc::new(InProcessLauncher::new(profile())),
        Arc::new(FixedCpuMonitor(vec![25.0])),
    );
    AgentDaemon::bind("127.0.0.1:0", config).unwrap().spawn().unwrap()
}

fn plan(addrs: &[SocketAddr], compilers: &[&str]) -> ExperimentPlan {
    let mut plan = ExperimentPlan::new("cli");
    for (i, a) in addrs.iter().enumerate() {
        let id = format!("d{i}");
        plan.devices.push(DeviceSpec { id: id.clone(), address: a.to_string(), labels: Default::default() });
        let specs = compilers
            .iter()
            .map(|&c| if c == "identity" { CompilerSpec::identity(c) } else { CompilerSpec::new(c) })
            .collect();
        plan.compilers.insert(id, specs);
    }
    plan.models = vec![ModelSpec::block(BlockKind::Conv, 64, 1), ModelSpec::block(BlockKind::Conv, 64, 2)];
    plan.batch_sizes = vec![1, 2, 4];
    plan.repetitions = 3;
    plan.warmup = 1;
    plan
}

fn write_plan(dir: &Path, plan: &ExperimentPlan) -> PathBuf {
    let path = dir.join("plan.yaml");
    fs::write(&path, serialize_plan(plan)).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_plan(dir.path(), &plan(&["127.0.0.1:9".parse().unwrap()], &["identity", "fast"]));
    let out = graphbench(&["validate", "--plan", s(&good)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty() && out.stderr.is_empty());

    let text = fs::read_to_string(&good).unwrap().replace("- 1\n- 2\n- 4\n", "- 4\n- 2\n");
    let bad = dir.path().join("bad.yaml");
    fs::write(&bad, text).unwrap();
    let out = graphbench(&["validate", "--plan", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_sizes"));

    let out = graphbench(&["validate", "--plan", s(&dir.path().join("missing.yaml"))]);
    assert_eq!(out.status.code(), Some(3));

    fs::write(&bad, "version: 1\nplan_id: [").unwrap();
    assert_eq!(graphbench(&["validate", "--plan", s(&bad)]).status.code(), Some(2));
}

#[test]
fn run_analyze_report() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let agents: Vec<_> = dirs.iter().map(|d| agent(d.path())).collect();
    let work = tempfile::tempdir().unwrap();
    let plan_path = write_plan(work.path(), &plan(&[agents[0].addr(), agents[1].addr()], &["identity", "fast"]));
    let archive = work.path().join("results.json.gz");
    let state = work.path().join("state");

    let out = Command::new(env!("CARGO_BIN_EXE_graphbench"))
        .args(["run", "--plan", s(&plan_path), "--archive", s(&archive)])
        .env("GRAPHBENCH_STATE_DIR", &state)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(state.join("cli.journal.jsonl").exists());
    let a = read_archive(&archive).unwrap();
    assert_eq!(a.records.len(), 24);

    let out = graphbench(&["analyze", "--archive", s(&archive), "--metrics", "bsr", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("metric,device,compiler,model,batch,value,std,note\n"));
    assert!(csv.lines().filter(|l| l.contains(",identity,")).all(|l| l.contains(",1,,")));

    let out = graphbench(&["analyze", "--archive", s(&archive), "--group-by", "family,compiler", "--metrics", "throughput,cpu"]);
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("conv-blocks") && table.contains("25.00 ± 0.00"), "{table}");

    let reports = work.path().join("reports");
    for format in ["csv", "json", "svg"] {
        let out = graphbench(&["report", "--archive", s(&archive), "--format", format, "--out-dir", s(&reports)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(reports.join("ase.csv").exists());
    assert!(reports.join("series/ase.csv").exists());
    assert!(reports.join("charts").read_dir().unwrap().count() > 0);
    assert_eq!(read_archive(&reports.join("archive.json")).unwrap(), a);

    let out = graphbench(&["report", "--archive", s(&archive), "--format", "xlsx", "--out-dir", s(&reports)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown report format"));
}

#[test]
fn speedup_on_identity_only_archive_fails() {
    let dir = tempfile::tempdir().unwrap();
    let a = agent(dir.path());
    let work = tempfile::tempdir().unwrap();
    let plan_path = write_plan(work.path(), &plan(&[a.addr()], &["identity"]));
    let archive = work.path().join("a.json");
    let state = work.path().join("state");
    let out = Command::new(env!("CARGO_BIN_EXE_graphbench"))
        .args(["run", "--plan", s(&plan_path), "--archive", s(&archive)])
        .env("GRAPHBENCH_STATE_DIR", &state)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = graphbench(&["analyze", "--archive", s(&archive), "--metrics", "speedup"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no identity baseline"));
}

#[test]
fn unreachable_device_exits_partial() {
    let dir = tempfile::tempdir().unwrap();
    let a = agent(dir.path());
    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let work = tempfile::tempdir().unwrap();
    let plan_path = write_plan(work.path(), &plan(&[a.addr(), dead], &["identity", "fast"]));
    let archive = work.path().join("a.json");
    let out = Command::new(env!("CARGO_BIN_EXE_graphbench"))
        .args(["run", "--plan", s(&plan_path), "--archive", s(&archive), "--reconnect-attempts", "1"])
        .args(["--reconnect-delay", "0.05", "--state-dir", s(&work.path().join("st"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let a = read_archive(&archive).unwrap();
    assert_eq!(a.records.len(), 12);
    assert_eq!(a.failures.len(), 12);
}

/// The adapter binary is built alongside this one by the workspace.
fn synthetic_adapter() -> PathBuf {
    let exe = PathBuf::from(env!("CARGO_BIN_EXE_graphbench"));
    let path = exe.with_file_name(format!("graphbench-synthetic-adapter{}", std::env::consts::EXE_SUFFIX));
    assert!(path.exists(), "{} missing; build the whole workspace", path.display());
    path
}

struct Child(std::process::Child);

impl Drop for Child {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn agent_subcommand_serves_a_run() {
    let work = tempfile::tempdir().unwrap();
    let profile_path = work.path().join("profile.json");
    fs::write(&profile_path, serde_json::to_string(&profile()).unwrap()).unwrap();
    let adapter = synthetic_adapter();
    let manifest = work.path().join("adapters.json");
    let argv = serde_json::json!([s(&adapter), "--profile", s(&profile_path)]);
    fs::write(&manifest, serde_json::json!({"identity": argv, "fast": argv}).to_string()).unwrap();

    let mut child = Command::new(env!("CARGO_BIN_EXE_graphbench"))
        .args(["agent", "--listen", "127.0.0.1:0", "--adapters-manifest", s(&manifest)])
        .args(["--state-dir", s(&work.path().join("agent-state"))])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let stderr = child.stderr.take().unwrap();
    let child = Child(child);
    let mut line = String::new();
    let mut reader = BufReader::new(stderr);
    reader.read_line(&mut line).unwrap();
    let addr: SocketAddr = line.trim().rsplit(' ').next().unwrap().parse().unwrap();

    let plan_path = write_plan(work.path(), &plan(&[addr], &["identity", "fast"]));
    let archive = work.path().join("a.json");
    let out = graphbench(&[
        "run",
        "--plan",
        s(&plan_path),
        "--archive",
        s(&archive),
        "--state-dir",
        s(&work.path().join("coord")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let a = read_archive(&archive).unwrap();
    assert_eq!(a.records.len(), 12);
    assert!(a.records.iter().all(|r| r.throughput_mean > 0.0));
    drop(child);
}
