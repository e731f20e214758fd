//! A scripted agent speaking the coordinator wire protocol by hand, for
//! misbehaviours a real agent never produces.

use std::net::{SocketAddr, TcpListener};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use chrono::{TimeZone, Utc};
use graphbench_core::model::{parse_task_id, ExperimentPlan, Measurement};
use graphbench_core::wire::{Envelope, WireConn, WireMessage, WIRE_PROTOCOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Script {
    /// Upload everything twice, identically.
    Duplicate,
    /// Upload everything, then a different value for one task, then the
    /// originals as the final upload.
    Conflict,
    /// Replay an already-used sequence number before the final upload.
    Replay,
}

pub struct FakeAgent {
    pub addr: SocketAddr,
    handle: JoinHandle<Vec<WireMessage>>,
}

impl FakeAgent {
    pub fn spawn(script: Script) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            serve(WireConn::new(stream, ""), script)
        });
        FakeAgent { addr, handle }
    }

    /// Every message the coordinator sent after the deploy was acknowledged.
    pub fn replies(self) -> Vec<WireMessage> {
        self.handle.join().expect("fake agent panicked")
    }
}

/// The value a well-behaved device would report for a task.
pub fn measurement(plan: &ExperimentPlan, task_id: &str) -> Measurement {
    let b = parse_task_id(task_id).unwrap().batch_size;
    let at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    Measurement {
        task_id: task_id.to_string(),
        throughput_samples: (0..plan.repetitions).map(|i| 100.0 * f64::from(b) + f64::from(i)).collect(),
        cpu_samples: vec![30.0],
        compile_time_s: 0.5,
        wall_start: at,
        wall_end: at,
    }
}

fn upload(conn: &mut WireConn, measurements: Vec<Measurement>, final_upload: bool) -> WireMessage {
    conn.send(WireMessage::ResultsUpload { measurements, failures: vec![], final_upload }).unwrap();
    conn.recv().unwrap().body
}

fn serve(mut conn: WireConn, script: Script) -> Vec<WireMessage> {
    conn.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
    let hello = conn.recv().unwrap();
    conn.set_plan_id(hello.plan_id.clone());
    conn.send(WireMessage::Hello { agent_version: "fake".into(), protocol: WIRE_PROTOCOL_VERSION }).unwrap();
    let WireMessage::DeployPlan { plan, tasks } = conn.recv().unwrap().body else {
        panic!("expected deploy_plan");
    };
    conn.send(WireMessage::Ack).unwrap();

    let all: Vec<Measurement> = tasks.iter().map(|t| measurement(&plan, t)).collect();
    let mut replies = Vec::new();
    match script {
        Script::Duplicate => {
            replies.push(upload(&mut conn, all.clone(), false));
            replies.push(upload(&mut conn, all, true));
        }
        Script::Conflict => {
            replies.push(upload(&mut conn, all.clone(), false));
            let mut changed = all[0].clone();
            changed.throughput_samples[0] *= 2.0;
            replies.push(upload(&mut conn, vec![changed], false));
            replies.push(upload(&mut conn, all, true));
        }
        Script::Replay => {
            let stale = Envelope {
                plan_id: hello.plan_id.clone(),
                seq: 1,
                body: WireMessage::Progress { completed: 0, total: tasks.len(), current: None },
            };
            conn.send_raw(&stale).unwrap();
            replies.push(conn.recv().unwrap().body);
            replies.push(upload(&mut conn, all, true));
        }
    }
    let teardown = conn.recv().unwrap().body;
    conn.send(WireMessage::Ack).unwrap();
    replies.push(teardown);
    replies
}
