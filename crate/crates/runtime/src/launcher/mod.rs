//! Starts, supervises and stops module processes.
//!
//! The launcher keeps a persisted registry of module descriptors. Each
//! launched module runs as a child process executing `<program> <args>
//! --config <file>`; a child that exits while it should be running is
//! relaunched. Modules that are registered but stopped keep their topics, so
//! messages for them accumulate on the bus until they come back.

mod client;
pub mod protocol;
mod service;

use thiserror::Error;

pub use client::{LauncherDirectory, RemoteLauncher};
pub use protocol::{ModuleStatus, TerminateReply};
pub use service::{handle_request, serve, Launcher, LauncherOptions};

pub const DEFAULT_PORT: u16 = 7612;

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error("ALREADY_RUNNING: {0}")]
    AlreadyRunning(String),
    #[error("NOT_RUNNING: {0}")]
    NotRunning(String),
    #[error("UNKNOWN_PROCESSOR: {0}")]
    UnknownProcessor(String),
    #[error("BAD_DESCRIPTOR: {0}")]
    BadDescriptor(String),
    #[error("TOPIC_COLLISION: {0}")]
    TopicCollision(String),
    #[error("IO_FAIL: {0}")]
    Io(#[from] std::io::Error),
    #[error("{code}: {detail}")]
    Remote { code: String, detail: String },
}

impl LaunchError {
    pub fn code(&self) -> &str {
        match self {
            LaunchError::AlreadyRunning(_) => "ALREADY_RUNNING",
            LaunchError::NotRunning(_) => "NOT_RUNNING",
            LaunchError::UnknownProcessor(_) => "UNKNOWN_PROCESSOR",
            LaunchError::BadDescriptor(_) => "BAD_DESCRIPTOR",
            LaunchError::TopicCollision(_) => "TOPIC_COLLISION",
            LaunchError::Io(_) => "IO_FAIL",
            LaunchError::Remote { code, .. } => code,
        }
    }
}
