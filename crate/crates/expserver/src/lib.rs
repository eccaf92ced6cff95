//! Live-operator experiment server: runs the cart-pole in real time,
//! streams SH-delayed telemetry over a WebSocket, routes `S` keypresses
//! through the simulated HA downlink and records NDJSON session logs.

pub mod server;
pub mod session;
pub mod wire;

pub use server::{router, serve, AppState, ServerConfig, ServerError};
pub use session::{Finalized, Session, SessionConfig, SessionError, SessionPhase};
pub use wire::{ControlAction, WireError, WireMessage, SCHEMA_VERSION};
