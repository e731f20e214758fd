//! Adapter wire protocol v1: one UTF-8 JSON object per line, discriminated
//! by `type`. The adapter greets with `{"type":"hello","protocol":1}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::ModelSpec;

pub const ADAPTER_PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AdapterRequest {
    /// Realize and compile `model` for a fixed batch size.
    Init {
        model: ModelSpec,
        compiler_id: String,
        #[serde(default)]
        flags: BTreeMap<String, String>,
        batch_size: u32,
    },
    Bench {
        repetitions: u32,
        warmup: u32,
        samples_per_repetition: u32,
    },
    Shutdown,
}

impl AdapterRequest {
    pub fn kind(&self) -> &'static str {
        match self {
            AdapterRequest::Init { .. } => "init",
            AdapterRequest::Bench { .. } => "bench",
            AdapterRequest::Shutdown => "shutdown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AdapterResponse {
    Hello { protocol: u32 },
    InitOk { compile_time_s: f64 },
    BenchOk { throughput_samples: Vec<f64> },
    Error { code: String, message: String },
    Bye,
}

impl AdapterResponse {
    pub fn error(code: impl Into<String>, message: impl Into<String>) -> Self {
        AdapterResponse::Error { code: code.into(), message: message.into() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AdapterResponse::Hello { .. } => "hello",
            AdapterResponse::InitOk { .. } => "init_ok",
            AdapterResponse::BenchOk { .. } => "bench_ok",
            AdapterResponse::Error { .. } => "error",
            AdapterResponse::Bye => "bye",
        }
    }
}

/// Error codes used by the bundled adapters.
pub mod codes {
    pub const PROTOCOL: &str = "protocol";
    pub const UNKNOWN_COMPILER: &str = "unknown_compiler";
    pub const UNSUPPORTED_MODEL: &str = "unsupported_model";
    pub const INIT_FAILED: &str = "init_failed";
    pub const BENCH_FAILED: &str = "bench_failed";
}

/// Serializes a message as a single line (without the trailing newline).
pub fn encode_line<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("protocol messages serialize")
}

pub fn decode_line<'a, T: Deserialize<'a>>(line: &'a str) -> serde_json::Result<T> {
    serde_json::from_str(line.trim_end_matches(['\r', '\n']))
}
