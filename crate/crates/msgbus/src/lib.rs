//! Embedded durable publish-subscribe broker.
//!
//! Topics are single-partition append-only logs with dense offsets from 0.
//! Consumer groups track a committed next-offset per topic; a consumer
//! resumes at its group's committed position, so anything polled but not
//! committed before a crash is delivered again (at-least-once).
//!
//! The same operations are available in-process through [`Broker`] and over
//! TCP through [`RemoteBus`]; both implement [`Bus`].
//!
//! On disk:
//!
//! ```text
//! <root>/topics/<name>/log            length-prefixed records: key(16) | enqueue_time(8, BE) | value
//! <root>/groups/<group>/<topic>.offset  committed next offset, decimal, replaced atomically
//! ```

mod broker;
mod client;
pub mod protocol;
mod server;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

pub use broker::{decode_log_record, encode_log_record, Broker, BrokerOptions};
pub use client::RemoteBus;
pub use server::{handle_request, serve};

pub const DEFAULT_PORT: u16 = 7611;

pub type ConsumerId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusMessage {
    pub offset: u64,
    pub key: Uuid,
    pub value: Vec<u8>,
    pub enqueue_time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicInfo {
    pub name: String,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscription {
    pub consumer: ConsumerId,
    pub topic: String,
    pub group: String,
    /// Offset the first poll starts from.
    pub position: u64,
}

#[derive(Debug, Error)]
pub enum BusError {
    #[error("BAD_NAME: {0:?}")]
    BadName(String),
    #[error("NO_TOPIC: {0}")]
    NoTopic(String),
    #[error("CLOSED: consumer {0}")]
    Closed(ConsumerId),
    #[error("BAD_OFFSET: {offset} outside 0..={len}")]
    BadOffset { offset: u64, len: u64 },
    #[error("BAD_REQUEST: {0}")]
    BadRequest(String),
    #[error("IO_FAIL: {0}")]
    Io(#[from] std::io::Error),
    #[error("{code}: {detail}")]
    Remote { code: String, detail: String },
}

impl BusError {
    pub fn code(&self) -> &str {
        match self {
            BusError::BadName(_) => "BAD_NAME",
            BusError::NoTopic(_) => "NO_TOPIC",
            BusError::Closed(_) => "CLOSED",
            BusError::BadOffset { .. } => "BAD_OFFSET",
            BusError::BadRequest(_) => "BAD_REQUEST",
            BusError::Io(_) => "IO_FAIL",
            BusError::Remote { code, .. } => code,
        }
    }

    /// Transport or storage failure, as opposed to a rejected request.
    pub fn is_io(&self) -> bool {
        self.code() == "IO_FAIL"
    }
}

/// The broker operations, in-process or remote.
///
/// `poll` and `commit` on one consumer must not be called concurrently;
/// distinct consumers are independent.
pub trait Bus: Send + Sync {
    /// Idempotent: an existing topic is returned unchanged.
    fn create_topic(&self, name: &str) -> Result<TopicInfo, BusError>;

    /// Appends durably and returns the new message's offset.
    fn publish(&self, topic: &str, key: Uuid, value: &[u8]) -> Result<u64, BusError>;

    /// Opens a consumer positioned at the group's committed offset.
    fn subscribe(&self, topic: &str, group: &str) -> Result<Subscription, BusError>;

    /// Up to `max` messages in offset order from the consumer's position,
    /// waiting at most `timeout` for the first one. Advances the in-memory
    /// position only.
    fn poll(
        &self,
        consumer: ConsumerId,
        max: usize,
        timeout: Duration,
    ) -> Result<Vec<BusMessage>, BusError>;

    /// Durably sets the group's position for the consumer's topic.
    fn commit(&self, consumer: ConsumerId, next_offset: u64) -> Result<(), BusError>;

    fn close(&self, consumer: ConsumerId) -> Result<(), BusError>;

    fn topic_len(&self, topic: &str) -> Result<u64, BusError>;
}

/// Reads every message of `topic` from offset 0 under a throwaway group.
pub fn read_all(bus: &dyn Bus, topic: &str) -> Result<Vec<BusMessage>, BusError> {
    let group = format!("reader-{}", Uuid::new_v4().simple());
    let sub = bus.subscribe(topic, &group)?;
    let len = bus.topic_len(topic)?;
    let mut out = Vec::with_capacity(len as usize);
    while (out.len() as u64) < len {
        let batch = bus.poll(sub.consumer, 1024, Duration::from_millis(200))?;
        if batch.is_empty() {
            break;
        }
        out.extend(batch);
    }
    bus.close(sub.consumer)?;
    Ok(out)
}
