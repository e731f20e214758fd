//! Client side of one adapter session: `hello`, `init`, `bench`*, `shutdown`.

use std::collections::BTreeMap;
use std::io;
use std::time::Duration;

use thiserror::Error;

use super::protocol::{
    decode_line, encode_line, AdapterRequest, AdapterResponse, ADAPTER_PROTOCOL_VERSION,
};
use super::transport::{LineTransport, Recv};
use crate::model::{AdapterTimeouts, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseTimeouts {
    pub handshake: Duration,
    pub init: Duration,
    pub bench: Duration,
    pub shutdown: Duration,
}

impl Default for PhaseTimeouts {
    fn default() -> Self {
        Self::from(AdapterTimeouts::default())
    }
}

impl From<AdapterTimeouts> for PhaseTimeouts {
    fn from(t: AdapterTimeouts) -> Self {
        Self {
            handshake: Duration::from_secs(30),
            init: Duration::from_secs(t.init_s),
            bench: Duration::from_secs(t.bench_s),
            shutdown: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Handshake,
    Init,
    Bench,
    Shutdown,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Handshake => "handshake",
            Phase::Init => "init",
            Phase::Bench => "bench",
            Phase::Shutdown => "shutdown",
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("adapter protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("adapter exited without `bye` during {0}")]
    AdapterCrash(&'static str),
    #[error("adapter did not answer {phase} within {after:?}")]
    Timeout { phase: &'static str, after: Duration },
    #[error("adapter error `{code}`: {message}")]
    Adapter { code: String, message: String },
    #[error("adapter I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    AwaitInit,
    Ready,
    Closed,
}

pub struct AdapterSession {
    transport: Box<dyn LineTransport>,
    timeouts: PhaseTimeouts,
    state: State,
    expected_samples: Option<usize>,
}

impl AdapterSession {
    /// Waits for the adapter's `hello` and checks the protocol version.
    pub fn open(transport: Box<dyn LineTransport>, timeouts: PhaseTimeouts) -> Result<Self, SessionError> {
        let mut session = Self { transport, timeouts, state: State::AwaitInit, expected_samples: None };
        match session.receive(Phase::Handshake)? {
            AdapterResponse::Hello { protocol } if protocol == ADAPTER_PROTOCOL_VERSION => Ok(session),
            AdapterResponse::Hello { protocol } => {
                session.close();
                Err(SessionError::ProtocolViolation(format!(
                    "adapter speaks protocol {protocol}, expected {ADAPTER_PROTOCOL_VERSION}"
                )))
            }
            other => {
                session.close();
                Err(SessionError::ProtocolViolation(format!("expected hello, got {}", other.kind())))
            }
        }
    }

    fn close(&mut self) {
        self.state = State::Closed;
        self.transport.terminate();
    }

    fn receive(&mut self, phase: Phase) -> Result<AdapterResponse, SessionError> {
        let after = match phase {
            Phase::Handshake => self.timeouts.handshake,
            Phase::Init => self.timeouts.init,
            Phase::Bench => self.timeouts.bench,
            Phase::Shutdown => self.timeouts.shutdown,
        };
        loop {
            match self.transport.recv(after) {
                Ok(Recv::Line(line)) if line.trim().is_empty() => continue,
                Ok(Recv::Line(line)) => {
                    return decode_line(&line).map_err(|e| {
                        self.close();
                        SessionError::ProtocolViolation(format!("unparseable line `{line}`: {e}"))
                    });
                }
                Ok(Recv::Eof) => {
                    self.close();
                    return Err(SessionError::AdapterCrash(phase.name()));
                }
                Ok(Recv::TimedOut) => {
                    self.close();
                    return Err(SessionError::Timeout { phase: phase.name(), after });
                }
                Err(e) => {
                    self.close();
                    return Err(SessionError::Io(e));
                }
            }
        }
    }

    /// Sends one request and returns its validated response. Enforces
    /// `init` -> `bench`* -> `shutdown` ordering before anything is sent.
    pub fn exchange(&mut self, request: &AdapterRequest) -> Result<AdapterResponse, SessionError> {
        let phase = match (request, self.state) {
            (_, State::Closed) => {
                return Err(SessionError::ProtocolViolation("session is closed".into()));
            }
            (AdapterRequest::Init { .. }, State::AwaitInit) => Phase::Init,
            (AdapterRequest::Init { .. }, State::Ready) => {
                return Err(SessionError::ProtocolViolation("init sent twice".into()));
            }
            (AdapterRequest::Bench { .. }, State::AwaitInit) => {
                return Err(SessionError::ProtocolViolation("bench before init".into()));
            }
            (AdapterRequest::Bench { .. }, State::Ready) => Phase::Bench,
            (AdapterRequest::Shutdown, _) => Phase::Shutdown,
        };
        if let AdapterRequest::Bench { repetitions, .. } = request {
            self.expected_samples = Some(*repetitions as usize);
        }
        if let Err(e) = self.transport.send(&encode_line(request)) {
            self.close();
            return Err(if e.kind() == io::ErrorKind::BrokenPipe {
                SessionError::AdapterCrash(phase.name())
            } else {
                SessionError::Io(e)
            });
        }
        let response = self.receive(phase)?;
        let violation = |msg: String| SessionError::ProtocolViolation(msg);
        let result = match (phase, response) {
            (_, AdapterResponse::Error { code, message }) => {
                Err(SessionError::Adapter { code, message })
            }
            (Phase::Init, AdapterResponse::InitOk { compile_time_s }) => {
                if compile_time_s.is_finite() && compile_time_s >= 0.0 {
                    self.state = State::Ready;
                    return Ok(AdapterResponse::InitOk { compile_time_s });
                }
                Err(violation(format!("negative compile time {compile_time_s}")))
            }
            (Phase::Bench, AdapterResponse::BenchOk { throughput_samples }) => {
                let expected = self.expected_samples.unwrap_or_default();
                if throughput_samples.len() != expected {
                    Err(violation(format!(
                        "bench_ok carried {} samples, expected {expected}",
                        throughput_samples.len()
                    )))
                } else {
                    return Ok(AdapterResponse::BenchOk { throughput_samples });
                }
            }
            (Phase::Shutdown, AdapterResponse::Bye) => {
                self.close();
                return Ok(AdapterResponse::Bye);
            }
            (phase, other) => Err(violation(format!(
                "unexpected {} in response to {}",
                other.kind(),
                phase.name()
            ))),
        };
        self.close();
        result
    }

    /// Returns the reported compile time in seconds.
    pub fn init(
        &mut self,
        model: &ModelSpec,
        compiler_id: &str,
        flags: &BTreeMap<String, String>,
        batch_size: u32,
    ) -> Result<f64, SessionError> {
        let request = AdapterRequest::Init {
            model: model.clone(),
            compiler_id: compiler_id.to_string(),
            flags: flags.clone(),
            batch_size,
        };
        match self.exchange(&request)? {
            AdapterResponse::InitOk { compile_time_s } => Ok(compile_time_s),
            other => unreachable!("exchange validated init response, got {other:?}"),
        }
    }

    pub fn bench(&mut self, repetitions: u32, warmup: u32) -> Result<Vec<f64>, SessionError> {
        let request = AdapterRequest::Bench { repetitions, warmup, samples_per_repetition: 1 };
        match self.exchange(&request)? {
            AdapterResponse::BenchOk { throughput_samples } => Ok(throughput_samples),
            other => unreachable!("exchange validated bench response, got {other:?}"),
        }
    }

    pub fn shutdown(mut self) -> Result<(), SessionError> {
        self.exchange(&AdapterRequest::Shutdown).map(|_| ())
    }
}

impl Drop for AdapterSession {
    fn drop(&mut self) {
        if self.state != State::Closed {
            self.transport.terminate();
        }
    }
}

/// Runs a whole scripted session and returns one response per request.
/// Stops at the first error.
pub fn adapter_session(
    transport: Box<dyn LineTransport>,
    requests: &[AdapterRequest],
    timeouts: PhaseTimeouts,
) -> Result<Vec<AdapterResponse>, SessionError> {
    let mut session = AdapterSession::open(transport, timeouts)?;
    requests.iter().map(|r| session.exchange(r)).collect()
}
