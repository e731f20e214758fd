//! System-wide CPU utilization sampling over a benchmark window.
//!
//! The sampler thread sleeps on a channel between reads of `/proc/stat`, so
//! its duty cycle at a 100 ms interval is a single small file read per tick,
//! far below 1%.

use std::fs;
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::Duration;

/// Source of CPU samples for one measurement window.
pub trait CpuMonitor: Send + Sync {
    fn start(&self, interval: Duration) -> Box<dyn CpuWindow>;
}

/// An open sampling window. Samples are only collected between `start` and
/// `finish`; a window shorter than one interval yields no samples.
pub trait CpuWindow: Send {
    fn finish(self: Box<Self>) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CpuTimes {
    idle: u64,
    total: u64,
}

fn parse_proc_stat(text: &str) -> Option<CpuTimes> {
    let line = text.lines().find(|l| l.starts_with("cpu "))?;
    let fields: Vec<u64> = line.split_whitespace().skip(1).map_while(|f| f.parse().ok()).collect();
    if fields.len() < 4 {
        return None;
    }
    // user nice system idle iowait irq softirq steal; guest time is already in user
    let total = fields.iter().take(8).sum();
    let idle = fields[3] + fields.get(4).copied().unwrap_or(0);
    Some(CpuTimes { idle, total })
}

fn utilization(prev: CpuTimes, cur: CpuTimes) -> f64 {
    let total = cur.total.saturating_sub(prev.total);
    if total == 0 {
        return 0.0;
    }
    let idle = cur.idle.saturating_sub(prev.idle).min(total);
    (100.0 * (1.0 - idle as f64 / total as f64)).clamp(0.0, 100.0)
}

fn read_times() -> Option<CpuTimes> {
    parse_proc_stat(&fs::read_to_string("/proc/stat").ok()?)
}

/// Samples `/proc/stat`; yields no samples where it is unavailable.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemCpuMonitor;

struct SystemWindow {
    stop: Sender<()>,
    worker: JoinHandle<Vec<f64>>,
}

impl CpuMonitor for SystemCpuMonitor {
    fn start(&self, interval: Duration) -> Box<dyn CpuWindow> {
        let (stop, stopped) = mpsc::channel::<()>();
        let worker = thread::spawn(move || {
            let mut samples = Vec::new();
            let Some(mut prev) = read_times() else {
                return samples;
            };
            while let Err(RecvTimeoutError::Timeout) = stopped.recv_timeout(interval) {
                let Some(cur) = read_times() else { break };
                samples.push(utilization(prev, cur));
                prev = cur;
            }
            samples
        });
        Box::new(SystemWindow { stop, worker })
    }
}

impl CpuWindow for SystemWindow {
    fn finish(self: Box<Self>) -> Vec<f64> {
        let _ = self.stop.send(());
        self.worker.join().unwrap_or_default()
    }
}

/// Returns the same samples for every window. Deterministic stand-in for tests
/// and synthetic runs.
#[derive(Debug, Default, Clone)]
pub struct FixedCpuMonitor(pub Vec<f64>);

struct FixedWindow(Vec<f64>);

impl CpuMonitor for FixedCpuMonitor {
    fn start(&self, _interval: Duration) -> Box<dyn CpuWindow> {
        Box::new(FixedWindow(self.0.clone()))
    }
}

impl CpuWindow for FixedWindow {
    fn finish(self: Box<Self>) -> Vec<f64> {
        self.0
    }
}
