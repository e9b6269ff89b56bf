//! Durable result and feedback store.
//!
//! One append-only record log holds every accepted write; the in-memory
//! index is rebuilt from it on open. Results are first-write-wins per
//! `(task_id, node_id)`; feedback is append-only and must reference an
//! existing result.

mod client;
pub mod protocol;
mod records;
mod server;
mod store;

use thiserror::Error;
use uuid::Uuid;
use vpe_core::NodeId;

pub use client::RemoteStore;
pub use records::{
    FeedbackFilter, FeedbackKind, FeedbackRecord, ResultRecord, SaveOutcome, TaskRecord,
};
pub use server::{handle_request, serve};
pub use store::{Store, StoreOptions};

pub const DEFAULT_PORT: u16 = 7613;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("NO_RESULT: no result for task {task_id} node {node_id}")]
    NoResult { task_id: Uuid, node_id: NodeId },
    #[error("BAD_INDEX: index {index} outside a {len}-record result")]
    BadIndex { index: usize, len: usize },
    #[error("BAD_FEEDBACK: {0}")]
    BadFeedback(String),
    #[error("BAD_REQUEST: {0}")]
    BadRequest(String),
    #[error("IO_FAIL: {0}")]
    Io(#[from] std::io::Error),
    #[error("{code}: {detail}")]
    Remote { code: String, detail: String },
}

impl StoreError {
    pub fn code(&self) -> &str {
        match self {
            StoreError::NoResult { .. } => "NO_RESULT",
            StoreError::BadIndex { .. } => "BAD_INDEX",
            StoreError::BadFeedback(_) => "BAD_FEEDBACK",
            StoreError::BadRequest(_) => "BAD_REQUEST",
            StoreError::Io(_) => "IO_FAIL",
            StoreError::Remote { code, .. } => code,
        }
    }
}

/// Store operations, in-process or remote.
pub trait MetaStore: Send + Sync {
    fn save_result(&self, record: &ResultRecord) -> Result<SaveOutcome, StoreError>;

    /// Results of a task sorted by node id, optionally one node only.
    fn query_results(
        &self,
        task_id: Uuid,
        node_id: Option<NodeId>,
    ) -> Result<Vec<ResultRecord>, StoreError>;

    fn save_feedback(&self, record: &FeedbackRecord) -> Result<SaveOutcome, StoreError>;

    /// Matching feedback sorted by `created_at`.
    fn export_feedback(&self, filter: &FeedbackFilter) -> Result<Vec<FeedbackRecord>, StoreError>;

    fn save_task(&self, record: &TaskRecord) -> Result<SaveOutcome, StoreError>;

    fn get_task(&self, task_id: Uuid) -> Result<Option<TaskRecord>, StoreError>;
}
