//! Deterministic synthetic backend.
//!
//! Models the latency of one batch of `b` samples on a stack of depth `d`
//! (catalog models count as depth 1) as
//!
//! ```text
//! latency(b) = d * (alpha / (gamma_c * d^delta_c) + beta * b * max(1, b / s)) * jitter
//! throughput(b) = b / latency(b)
//! ```
//!
//! where `gamma_c` is the compiler's speedup on the fixed overhead, `delta_c`
//! its depth discount (0 for depth-agnostic compilers), `s` the saturation
//! batch and `jitter` a per-batch factor drawn from a ChaCha stream seeded by
//! (seed, compiler, model, batch). Results are identical on every host.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::protocol::{
    codes, decode_line, encode_line, AdapterRequest, AdapterResponse, ADAPTER_PROTOCOL_VERSION,
};
use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticProfile {
    /// Fixed per-batch overhead (seconds) of the uncompiled graph.
    pub base_latency_s: f64,
    /// Cost per sample (seconds) below saturation.
    pub per_sample_cost_s: f64,
    /// Overhead speedup per compiler id; the identity compiler uses 1.
    pub compiler_speedup: BTreeMap<String, f64>,
    /// Batch size beyond which per-sample cost grows linearly; `None` never saturates.
    #[serde(default)]
    pub saturation_batch: Option<f64>,
    pub seed: u64,
    /// Relative jitter amplitude in `[0, 1)`; 0 disables jitter.
    #[serde(default)]
    pub jitter: f64,
    /// Reported compile time per compiler id; absent ids report 0.
    #[serde(default)]
    pub compile_time_s: BTreeMap<String, f64>,
    /// Exponent in `[0, 1]` by which a compiler amortizes overhead over depth.
    #[serde(default)]
    pub depth_discount: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SyntheticError {
    #[error("compiler `{0}` has no speedup entry in the synthetic profile")]
    UnknownCompiler(String),
    #[error("invalid synthetic profile: {0}")]
    InvalidProfile(String),
}

impl SyntheticProfile {
    /// A profile with the given overhead/per-sample costs and a single
    /// `identity` compiler.
    pub fn new(base_latency_s: f64, per_sample_cost_s: f64) -> Self {
        Self {
            base_latency_s,
            per_sample_cost_s,
            compiler_speedup: [("identity".to_string(), 1.0)].into(),
            saturation_batch: None,
            seed: 0,
            jitter: 0.0,
            compile_time_s: BTreeMap::new(),
            depth_discount: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: String| Err(SyntheticError::InvalidProfile(m));
        if !(self.base_latency_s.is_finite() && self.base_latency_s > 0.0) {
            return bad(format!("base_latency_s must be > 0 (got {})", self.base_latency_s));
        }
        if !(self.per_sample_cost_s.is_finite() && self.per_sample_cost_s >= 0.0) {
            return bad(format!("per_sample_cost_s must be >= 0 (got {})", self.per_sample_cost_s));
        }
        for (id, g) in &self.compiler_speedup {
            if !(g.is_finite() && *g > 0.0) {
                return bad(format!("compiler_speedup.{id} must be > 0 (got {g})"));
            }
        }
        if let Some(s) = self.saturation_batch {
            if !(s.is_finite() && s >= 1.0) {
                return bad(format!("saturation_batch must be >= 1 (got {s})"));
            }
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad(format!("jitter must be in [0, 1) (got {})", self.jitter));
        }
        for (id, t) in &self.compile_time_s {
            if !(t.is_finite() && *t >= 0.0) {
                return bad(format!("compile_time_s.{id} must be >= 0 (got {t})"));
            }
        }
        for (id, d) in &self.depth_discount {
            if !(0.0..=1.0).contains(d) {
                return bad(format!("depth_discount.{id} must be in [0, 1] (got {d})"));
            }
        }
        Ok(())
    }

    pub fn compile_time(&self, compiler_id: &str) -> f64 {
        self.compile_time_s.get(compiler_id).copied().unwrap_or(0.0)
    }

    /// Noise-free latency of one batch.
    pub fn latency(
        &self,
        compiler_id: &str,
        model: &ModelSpec,
        batch_size: u32,
    ) -> Result<f64, SyntheticError> {
        let gamma = *self
            .compiler_speedup
            .get(compiler_id)
            .ok_or_else(|| SyntheticError::UnknownCompiler(compiler_id.to_string()))?;
        let depth = f64::from(model.block_spec().map_or(1, |b| b.depth.max(1)));
        let discount = self.depth_discount.get(compiler_id).copied().unwrap_or(0.0);
        let b = f64::from(batch_size);
        let saturation = self.saturation_batch.map_or(1.0, |s| (b / s).max(1.0));
        let overhead = self.base_latency_s / (gamma * depth.powf(discount));
        Ok(depth * (overhead + self.per_sample_cost_s * b * saturation))
    }

    fn jitter_rng(&self, compiler_id: &str, model: &ModelSpec, batch_size: u32) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(compiler_id.as_bytes());
        h.update([0]);
        h.update(model.key().as_bytes());
        h.update([0]);
        h.update(batch_size.to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}

/// Per-repetition throughput samples for one configuration.
pub fn synthetic_bench(
    profile: &SyntheticProfile,
    compiler_id: &str,
    model: &ModelSpec,
    batch_size: u32,
    repetitions: u32,
    samples_per_repetition: u32,
) -> Result<Vec<f64>, SyntheticError> {
    let latency = profile.latency(compiler_id, model, batch_size)?;
    let mut rng = profile.jitter_rng(compiler_id, model, batch_size);
    let batches = samples_per_repetition.max(1);
    let b = f64::from(batch_size);
    let samples = (0..repetitions)
        .map(|_| {
            let total: f64 = (0..batches)
                .map(|_| {
                    let u: f64 = rng.gen();
                    latency * (1.0 + profile.jitter * (2.0 * u - 1.0))
                })
                .sum();
            b / (total / f64::from(batches))
        })
        .collect();
    Ok(samples)
}

/// Failure modes the synthetic adapter can be told to exhibit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultInjection {
    /// Answer `init` with an error.
    #[serde(default)]
    pub fail_init: bool,
    /// Answer `bench` with an error.
    #[serde(default)]
    pub fail_bench: bool,
    /// Exit without `bye` right after the n-th response to a request.
    #[serde(default)]
    pub crash_after: Option<usize>,
    /// Never answer `bench`.
    #[serde(default)]
    pub hang_on_bench: bool,
}

#[derive(Debug)]
enum State {
    AwaitInit,
    Ready { compiler_id: String, model: ModelSpec, batch_size: u32 },
    Closed,
}

/// What the serving loop should do after a request.
#[derive(Debug, PartialEq)]
pub enum Action {
    Reply(AdapterResponse),
    /// Reply, then end the session.
    ReplyAndClose(AdapterResponse),
    /// Stop answering; drain input until it closes.
    Hang,
}

/// How a serving loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServeEnd {
    Shutdown,
    Crashed,
    InputClosed,
}

/// Protocol state machine for the synthetic backend.
#[derive(Debug)]
pub struct SyntheticAdapter {
    profile: SyntheticProfile,
    faults: FaultInjection,
    state: State,
}

impl SyntheticAdapter {
    pub fn new(profile: SyntheticProfile, faults: FaultInjection) -> Self {
        Self { profile, faults, state: State::AwaitInit }
    }

    pub fn handle(&mut self, request: AdapterRequest) -> Action {
        match (request, &self.state) {
            (_, State::Closed) => {
                Action::ReplyAndClose(AdapterResponse::error(codes::PROTOCOL, "session already closed"))
            }
            (AdapterRequest::Shutdown, _) => {
                self.state = State::Closed;
                Action::ReplyAndClose(AdapterResponse::Bye)
            }
            (AdapterRequest::Init { model, compiler_id, batch_size, .. }, State::AwaitInit) => {
                if self.faults.fail_init {
                    self.state = State::Closed;
                    return Action::ReplyAndClose(AdapterResponse::error(
                        codes::INIT_FAILED,
                        "induced init failure",
                    ));
                }
                if batch_size == 0 {
                    self.state = State::Closed;
                    return Action::ReplyAndClose(AdapterResponse::error(
                        codes::PROTOCOL,
                        "batch_size must be >= 1",
                    ));
                }
                if let Err(e) = self.profile.latency(&compiler_id, &model, batch_size) {
                    self.state = State::Closed;
                    return Action::ReplyAndClose(AdapterResponse::error(
                        codes::UNKNOWN_COMPILER,
                        e.to_string(),
                    ));
                }
                let compile_time_s = self.profile.compile_time(&compiler_id);
                self.state = State::Ready { compiler_id, model, batch_size };
                Action::Reply(AdapterResponse::InitOk { compile_time_s })
            }
            (AdapterRequest::Init { .. }, State::Ready { .. }) => {
                self.state = State::Closed;
                Action::ReplyAndClose(AdapterResponse::error(codes::PROTOCOL, "duplicate init"))
            }
            (AdapterRequest::Bench { .. }, State::AwaitInit) => {
                self.state = State::Closed;
                Action::ReplyAndClose(AdapterResponse::error(codes::PROTOCOL, "bench before init"))
            }
            (
                AdapterRequest::Bench { repetitions, samples_per_repetition, .. },
                State::Ready { compiler_id, model, batch_size },
            ) => {
                if self.faults.hang_on_bench {
                    return Action::Hang;
                }
                if self.faults.fail_bench {
                    self.state = State::Closed;
                    return Action::ReplyAndClose(AdapterResponse::error(
                        codes::BENCH_FAILED,
                        "induced bench failure",
                    ));
                }
                match synthetic_bench(
                    &self.profile,
                    compiler_id,
                    model,
                    *batch_size,
                    repetitions,
                    samples_per_repetition,
                ) {
                    Ok(throughput_samples) => Action::Reply(AdapterResponse::BenchOk { throughput_samples }),
                    Err(e) => {
                        self.state = State::Closed;
                        Action::ReplyAndClose(AdapterResponse::error(codes::BENCH_FAILED, e.to_string()))
                    }
                }
            }
        }
    }

    /// Runs the protocol over abstract line I/O: greets, then answers each
    /// line until shutdown, an induced crash, or end of input.
    pub fn serve_lines(
        mut self,
        mut next_line: impl FnMut() -> Option<String>,
        mut emit: impl FnMut(&str) -> io::Result<()>,
    ) -> io::Result<ServeEnd> {
        emit(&encode_line(&AdapterResponse::Hello { protocol: ADAPTER_PROTOCOL_VERSION }))?;
        let mut answered = 0usize;
        while let Some(line) = next_line() {
            if line.trim().is_empty() {
                continue;
            }
            let action = match decode_line::<AdapterRequest>(&line) {
                Ok(req) => self.handle(req),
                Err(e) => {
                    self.state = State::Closed;
                    Action::ReplyAndClose(AdapterResponse::error(
                        codes::PROTOCOL,
                        format!("malformed request: {e}"),
                    ))
                }
            };
            let (response, close) = match action {
                Action::Reply(r) => (r, false),
                Action::ReplyAndClose(r) => (r, true),
                Action::Hang => {
                    while next_line().is_some() {}
                    return Ok(ServeEnd::InputClosed);
                }
            };
            emit(&encode_line(&response))?;
            answered += 1;
            if self.faults.crash_after == Some(answered) {
                return Ok(ServeEnd::Crashed);
            }
            if close {
                return Ok(ServeEnd::Shutdown);
            }
        }
        Ok(ServeEnd::InputClosed)
    }

    /// Serves over a reader/writer pair such as a process's stdin/stdout.
    pub fn serve<R: BufRead, W: Write>(self, reader: R, mut writer: W) -> io::Result<ServeEnd> {
        let mut lines = reader.lines();
        let mut read_error = None;
        let end = self.serve_lines(
            || match lines.next() {
                Some(Ok(l)) => Some(l),
                Some(Err(e)) => {
                    read_error = Some(e);
                    None
                }
                None => None,
            },
            |line| {
                writer.write_all(line.as_bytes())?;
                writer.write_all(b"\n")?;
                writer.flush()
            },
        )?;
        match read_error {
            Some(e) => Err(e),
            None => Ok(end),
        }
    }
}
