use uuid::Uuid;
use vpe_core::wire::{FrameClient, RemoteError};
use vpe_core::NodeId;

use crate::protocol::*;
use crate::{
    FeedbackFilter, FeedbackRecord, MetaStore, ResultRecord, SaveOutcome, StoreError, TaskRecord,
};

#[derive(Debug)]
pub struct RemoteStore {
    client: FrameClient,
}

impl From<RemoteError> for StoreError {
    fn from(e: RemoteError) -> Self {
        match e {
            RemoteError::Io(io) => StoreError::Io(io),
            RemoteError::Remote { code, detail } => StoreError::Remote { code, detail },
            RemoteError::Protocol(p) => StoreError::Remote {
                code: "PROTOCOL".into(),
                detail: p,
            },
        }
    }
}

impl RemoteStore {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            client: FrameClient::new(addr),
        }
    }

    pub fn addr(&self) -> &str {
        self.client.addr()
    }

    fn save<T: serde::Serialize>(&self, op: u8, body: &T) -> Result<SaveOutcome, StoreError> {
        let r: SaveReply = self.client.call(op, body)?;
        Ok(r.outcome)
    }
}

impl MetaStore for RemoteStore {
    fn save_result(&self, record: &ResultRecord) -> Result<SaveOutcome, StoreError> {
        self.save(OP_SAVE_RESULT, record)
    }

    fn query_results(
        &self,
        task_id: Uuid,
        node_id: Option<NodeId>,
    ) -> Result<Vec<ResultRecord>, StoreError> {
        let r: QueryReply = self
            .client
            .call(OP_QUERY, &QueryRequest { task_id, node_id })?;
        Ok(r.results)
    }

    fn save_feedback(&self, record: &FeedbackRecord) -> Result<SaveOutcome, StoreError> {
        self.save(OP_SAVE_FEEDBACK, record)
    }

    fn export_feedback(&self, filter: &FeedbackFilter) -> Result<Vec<FeedbackRecord>, StoreError> {
        let r: ExportReply = self.client.call(OP_EXPORT, filter)?;
        Ok(r.feedback)
    }

    fn save_task(&self, record: &TaskRecord) -> Result<SaveOutcome, StoreError> {
        self.save(OP_SAVE_TASK, record)
    }

    fn get_task(&self, task_id: Uuid) -> Result<Option<TaskRecord>, StoreError> {
        let r: GetTaskReply = self.client.call(OP_GET_TASK, &GetTaskRequest { task_id })?;
        Ok(r.task)
    }
}
