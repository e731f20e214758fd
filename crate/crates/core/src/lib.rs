//! Distributed benchmark orchestration for neural-network graph compilers.
//!
//! A coordinator deploys an [`model::ExperimentPlan`] to device agents; each
//! agent compiles and measures locally through backend adapters that speak a
//! newline-delimited JSON protocol, checkpoints after finished tasks, and
//! uploads its measurements. The analysis layer turns the collected
//! [`archive::ResultsArchive`] into throughput, batch-scaling (RTR, ASE, BSR)
//! and depth-scaling (slope, retention) tables.

pub mod adapter;
pub mod agent;
pub mod analysis;
pub mod archive;
pub mod blockgen;
pub mod config;
pub mod coordinator;
pub mod metrics;
pub mod model;
pub mod report;
pub mod wire;
