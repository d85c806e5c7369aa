//! Live session service: a simulation thread stepping the reduced solver at a
//! fixed timestep, fed by rig-parameter updates from websocket clients and
//! broadcasting reduced coordinates back to them.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, Frame, ServerNotice, Setup, PROTOCOL_VERSION};
pub use server::{serve, Pacing, RunningServer, ServeOptions};
pub use session::Session;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] eigenskin::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("protocol error: {0}")]
    Protocol(String),
}

pub type Result<T> = std::result::Result<T, ServiceError>;
