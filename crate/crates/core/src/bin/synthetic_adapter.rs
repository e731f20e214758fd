//! Synthetic backend adapter speaking the v1 line protocol on stdin/stdout.
//!
//! Usage: graphbench-synthetic-adapter --profile <profile.json>
//!            [--fail-init] [--fail-bench] [--hang-on-bench] [--crash-after N]

use std::io::{self, BufReader};
use std::process::ExitCode;

use graphbench_core::adapter::synthetic::ServeEnd;
use graphbench_core::adapter::{FaultInjection, SyntheticAdapter, SyntheticProfile};

fn usage(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    eprintln!(
        "usage: graphbench-synthetic-adapter --profile <file> [--fail-init] [--fail-bench] \
         [--hang-on-bench] [--crash-after N]"
    );
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let mut profile_path = None;
    let mut faults = FaultInjection::default();
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--profile" => profile_path = args.next(),
            "--fail-init" => faults.fail_init = true,
            "--fail-bench" => faults.fail_bench = true,
            "--hang-on-bench" => faults.hang_on_bench = true,
            "--crash-after" => match args.next().and_then(|n| n.parse().ok()) {
                Some(n) => faults.crash_after = Some(n),
                None => return usage("--crash-after needs a count"),
            },
            other => return usage(&format!("unknown argument `{other}`")),
        }
    }
    let Some(path) = profile_path else {
        return usage("--profile is required");
    };
    let profile: SyntheticProfile = match std::fs::read_to_string(&path)
        .map_err(|e| e.to_string())
        .and_then(|text| serde_json::from_str(&text).map_err(|e| e.to_string()))
    {
        Ok(p) => p,
        Err(e) => return usage(&format!("cannot load profile {path}: {e}")),
    };
    if let Err(e) = profile.validate() {
        return usage(&e.to_string());
    }

    let stdin = io::stdin();
    let stdout = io::stdout();
    match SyntheticAdapter::new(profile, faults).serve(BufReader::new(stdin.lock()), stdout.lock()) {
        Ok(ServeEnd::Crashed) => ExitCode::from(101),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adapter I/O error: {e}");
            ExitCode::FAILURE
        }
    }
}
