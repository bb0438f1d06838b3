//! Teleoperation service: the simulator behind a line-JSON TCP socket.
//!
//! See `PROTOCOL.md` at the repository root for the wire format.

pub mod protocol;
pub mod record;
pub mod server;
pub mod session;

pub use protocol::{CommandPayload, Event, Kind, Message, ProtocolError, Telemetry, DEFAULT_PORT};
pub use record::{replay, Recorder, ReplayError};
pub use server::{serve_blocking, start, ServeConfig, ServeError, ServerHandle};
pub use session::{Outgoing, Received, Session};
