//! Request and reply bodies for the store's TCP front end.

use serde::{Deserialize, Serialize};
use uuid::Uuid;
use vpe_core::NodeId;

use crate::{FeedbackFilter, FeedbackRecord, ResultRecord, SaveOutcome, TaskRecord};

pub const OP_SAVE_RESULT: u8 = 1;
pub const OP_QUERY: u8 = 2;
pub const OP_SAVE_FEEDBACK: u8 = 3;
pub const OP_EXPORT: u8 = 4;
pub const OP_SAVE_TASK: u8 = 5;
pub const OP_GET_TASK: u8 = 6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaveReply {
    pub outcome: SaveOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub task_id: Uuid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<NodeId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryReply {
    pub results: Vec<ResultRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportReply {
    pub feedback: Vec<FeedbackRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GetTaskRequest {
    pub task_id: Uuid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GetTaskReply {
    pub task: Option<TaskRecord>,
}

/// Decodes the request body for `opcode` without executing it.
pub fn check_request(opcode: u8, body: &[u8]) -> Result<(), String> {
    fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<(), String> {
        serde_json::from_slice::<T>(body)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }
    match opcode {
        OP_SAVE_RESULT => parse::<ResultRecord>(body),
        OP_QUERY => parse::<QueryRequest>(body),
        OP_SAVE_FEEDBACK => {
            let f: FeedbackRecord = serde_json::from_slice(body).map_err(|e| e.to_string())?;
            f.check_shape().map_err(|e| e.to_string())
        }
        OP_EXPORT => parse::<FeedbackFilter>(body),
        OP_SAVE_TASK => parse::<TaskRecord>(body),
        OP_GET_TASK => parse::<GetTaskRequest>(body),
        other => Err(format!("unknown opcode {other}")),
    }
}
