//! Backend adapters: the subprocess line protocol, transports, the client
//! session, and a deterministic synthetic backend.

pub mod launcher;
pub mod protocol;
pub mod session;
pub mod synthetic;
pub mod transport;

pub use launcher::{AdapterLauncher, AdapterManifest, InProcessLauncher, LaunchError};
pub use protocol::{AdapterRequest, AdapterResponse, ADAPTER_PROTOCOL_VERSION};
pub use session::{adapter_session, AdapterSession, PhaseTimeouts, SessionError};
pub use synthetic::{synthetic_bench, FaultInjection, SyntheticAdapter, SyntheticProfile};
pub use transport::{InProcessTransport, LineTransport, Recv, SubprocessTransport};
