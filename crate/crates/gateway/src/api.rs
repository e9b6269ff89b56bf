//! Request and response bodies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use uuid::Uuid;
use vpe_core::flowgraph::GraphJson;
use vpe_core::NodeId;
use vpe_metastore::FeedbackKind;

/// Payload injected at one source node; records are base64.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcePayload {
    pub datatype: String,
    #[serde(default)]
    pub records: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub graph: GraphJson,
    /// Keyed by source node id.
    #[serde(default)]
    pub source_payloads: BTreeMap<String, SourcePayload>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitReply {
    pub task_id: Uuid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeState {
    Waiting,
    Done,
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Overall {
    Running,
    Complete,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStatus {
    pub node_id: NodeId,
    pub module: String,
    pub state: NodeState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub done_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStatus {
    pub task_id: Uuid,
    pub overall: Overall,
    pub nodes: Vec<NodeStatus>,
    pub created_at: u64,
    /// Latest of the submission time and every result's time.
    pub last_activity: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub node_id: NodeId,
    pub module_id: String,
    pub datatype: String,
    /// Records in the requested window, base64.
    pub records: Vec<String>,
    pub record_count: usize,
    pub offset: usize,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultsReply {
    pub task_id: Uuid,
    pub results: Vec<ResultEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    /// Clients may supply an id to make retries idempotent.
    #[serde(default)]
    pub feedback_id: Option<Uuid>,
    pub task_id: Uuid,
    pub node_id: NodeId,
    pub kind: FeedbackKind,
    #[serde(default)]
    pub satisfaction: Option<i64>,
    #[serde(default)]
    pub selected_record_indices: Option<Vec<usize>>,
    /// Base64.
    #[serde(default)]
    pub revision: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackReply {
    pub feedback_id: Uuid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}
