//! Coordinator <-> agent wire protocol v1.
//!
//! Each frame is a 4-byte big-endian payload length followed by a UTF-8 JSON
//! [`Envelope`]. Every envelope carries the plan id and a per-sender sequence
//! number that must strictly increase within a connection.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{ExperimentPlan, Measurement, TaskFailure};

pub const WIRE_PROTOCOL_VERSION: u32 = 1;
pub const MAX_FRAME_LEN: usize = 64 * 1024 * 1024;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello {
        agent_version: String,
        protocol: u32,
    },
    /// The plan plus the ids of the tasks assigned to the receiving device.
    DeployPlan {
        plan: ExperimentPlan,
        tasks: Vec<String>,
    },
    Progress {
        completed: usize,
        total: usize,
        current: Option<String>,
    },
    ResultsUpload {
        measurements: Vec<Measurement>,
        #[serde(default)]
        failures: Vec<TaskFailure>,
        /// The last upload of this session; the device is then reported.
        #[serde(rename = "final")]
        final_upload: bool,
    },
    Teardown,
    Ack,
    Nack {
        reason: String,
    },
}

impl WireMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::Hello { .. } => "hello",
            WireMessage::DeployPlan { .. } => "deploy_plan",
            WireMessage::Progress { .. } => "progress",
            WireMessage::ResultsUpload { .. } => "results_upload",
            WireMessage::Teardown => "teardown",
            WireMessage::Ack => "ack",
            WireMessage::Nack { .. } => "nack",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub plan_id: String,
    pub seq: u64,
    pub body: WireMessage,
}

impl Envelope {
    /// Short content hash, used by the coordinator's journal.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("envelope serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("connection closed by peer")]
    Closed,
    #[error("timed out waiting for a message")]
    Timeout,
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_LEN} byte limit")]
    FrameTooLarge(usize),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("out-of-order message: seq {got} after {last}")]
    OutOfOrder { got: u64, last: u64, envelope: Box<Envelope> },
    #[error("message for plan `{got}` on a `{expected}` session")]
    WrongPlan { got: String, expected: String },
    #[error("I/O: {0}")]
    Io(io::Error),
}

impl From<io::Error> for WireError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => WireError::Timeout,
            io::ErrorKind::UnexpectedEof
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe => WireError::Closed,
            _ => WireError::Io(e),
        }
    }
}

impl WireError {
    /// Whether the connection is unusable after this error.
    pub fn is_fatal(&self) -> bool {
        !matches!(self, WireError::OutOfOrder { .. } | WireError::WrongPlan { .. })
    }
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    if payload.len() > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
    }
    let len = u32::try_from(payload.len()).expect("bounded by MAX_FRAME_LEN");
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream before a new frame.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, WireError> {
    let mut len = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut len[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Closed),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some(payload))
}

pub fn encode_envelope(env: &Envelope) -> Vec<u8> {
    serde_json::to_vec(env).expect("envelope serializes")
}

pub fn decode_envelope(payload: &[u8]) -> Result<Envelope, WireError> {
    serde_json::from_slice(payload).map_err(|e| WireError::Malformed(e.to_string()))
}

/// One framed connection with sequence bookkeeping for both directions.
pub struct WireConn {
    stream: TcpStream,
    plan_id: String,
    next_seq: u64,
    last_recv_seq: u64,
}

impl WireConn {
    pub fn new(stream: TcpStream, plan_id: impl Into<String>) -> Self {
        let _ = stream.set_nodelay(true);
        Self { stream, plan_id: plan_id.into(), next_seq: 1, last_recv_seq: 0 }
    }

    pub fn plan_id(&self) -> &str {
        &self.plan_id
    }

    /// Adopts the plan id of the peer (used by agents before deployment).
    pub fn set_plan_id(&mut self, plan_id: impl Into<String>) {
        self.plan_id = plan_id.into();
    }

    pub fn set_read_timeout(&self, timeout: Option<Duration>) -> io::Result<()> {
        self.stream.set_read_timeout(timeout)
    }

    pub fn send(&mut self, body: WireMessage) -> Result<Envelope, WireError> {
        let env = Envelope { plan_id: self.plan_id.clone(), seq: self.next_seq, body };
        self.next_seq += 1;
        write_frame(&mut self.stream, &encode_envelope(&env))?;
        Ok(env)
    }

    /// Sends a raw envelope without touching the sequence counter.
    pub fn send_raw(&mut self, env: &Envelope) -> Result<(), WireError> {
        write_frame(&mut self.stream, &encode_envelope(env))?;
        Ok(())
    }

    /// Receives the next envelope, rejecting replays and foreign plans.
    pub fn recv(&mut self) -> Result<Envelope, WireError> {
        let payload = read_frame(&mut self.stream)?.ok_or(WireError::Closed)?;
        let env = decode_envelope(&payload)?;
        if env.seq <= self.last_recv_seq {
            return Err(WireError::OutOfOrder {
                got: env.seq,
                last: self.last_recv_seq,
                envelope: Box::new(env),
            });
        }
        self.last_recv_seq = env.seq;
        if !self.plan_id.is_empty() && env.plan_id != self.plan_id {
            return Err(WireError::WrongPlan { got: env.plan_id, expected: self.plan_id.clone() });
        }
        Ok(env)
    }

    pub fn shutdown(&self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }
}
