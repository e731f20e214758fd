//! Client-side orchestration: deploy, monitor, collect, tear down.

pub mod journal;
pub mod run;
pub mod state;
pub mod store;

pub use journal::{check_teardown_after_reported, Direction, Journal, JournalEntry};
pub use run::{journal_path, partition, store_path, Coordinator, CoordinatorConfig, CoordinatorError, RunOutcome};
pub use state::{DevicePhase, IllegalTransition, SessionState};
pub use store::{Accepted, Conflict, ResultStore, StoreError};
