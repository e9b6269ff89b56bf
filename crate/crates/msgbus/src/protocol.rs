//! Request and reply bodies for the TCP front end.
//!
//! Every frame carries a JSON body; message values travel as standard
//! base64 with padding.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::{BusMessage, ConsumerId};

pub const OP_CREATE_TOPIC: u8 = 1;
pub const OP_PUBLISH: u8 = 2;
pub const OP_SUBSCRIBE: u8 = 3;
pub const OP_POLL: u8 = 4;
pub const OP_COMMIT: u8 = 5;
pub const OP_CLOSE: u8 = 6;
pub const OP_STAT: u8 = 7;

/// Upper bound on a single poll wait, so a client cannot pin a server thread.
pub const MAX_POLL_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicRequest {
    pub topic: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishRequest {
    pub topic: String,
    pub key: Uuid,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishReply {
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscribeRequest {
    pub topic: String,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PollRequest {
    pub consumer: ConsumerId,
    pub max_messages: usize,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub offset: u64,
    pub key: Uuid,
    pub value: String,
    pub enqueue_time: u64,
}

impl From<&BusMessage> for WireMessage {
    fn from(m: &BusMessage) -> Self {
        Self {
            offset: m.offset,
            key: m.key,
            value: STANDARD.encode(&m.value),
            enqueue_time: m.enqueue_time,
        }
    }
}

impl WireMessage {
    pub fn into_message(self) -> Result<BusMessage, base64::DecodeError> {
        Ok(BusMessage {
            offset: self.offset,
            key: self.key,
            value: STANDARD.decode(self.value)?,
            enqueue_time: self.enqueue_time,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollReply {
    pub messages: Vec<WireMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitRequest {
    pub consumer: ConsumerId,
    pub next_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloseRequest {
    pub consumer: ConsumerId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Empty {}

pub fn encode_value(value: &[u8]) -> String {
    STANDARD.encode(value)
}

pub fn decode_value(value: &str) -> Result<Vec<u8>, base64::DecodeError> {
    STANDARD.decode(value)
}

/// Decodes the request body for `opcode` without executing it. Used by the
/// server and by fuzzing.
pub fn check_request(opcode: u8, body: &[u8]) -> Result<(), String> {
    fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<(), String> {
        serde_json::from_slice::<T>(body)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }
    match opcode {
        OP_CREATE_TOPIC | OP_STAT => parse::<TopicRequest>(body),
        OP_PUBLISH => {
            let req: PublishRequest = serde_json::from_slice(body).map_err(|e| e.to_string())?;
            decode_value(&req.value)
                .map(|_| ())
                .map_err(|e| e.to_string())
        }
        OP_SUBSCRIBE => parse::<SubscribeRequest>(body),
        OP_POLL => parse::<PollRequest>(body),
        OP_COMMIT => parse::<CommitRequest>(body),
        OP_CLOSE => parse::<CloseRequest>(body),
        other => Err(format!("unknown opcode {other}")),
    }
}
