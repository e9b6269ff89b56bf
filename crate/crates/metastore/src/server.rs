use std::net::TcpListener;
use std::sync::Arc;

use serde::Serialize;
use vpe_core::wire::{decode_request, err_reply, ok_reply, serve_frames};

use crate::protocol::*;
use crate::{
    FeedbackFilter, FeedbackRecord, MetaStore, ResultRecord, Store, StoreError, TaskRecord,
};

fn reply<T: Serialize>(r: Result<T, StoreError>) -> Vec<u8> {
    match r {
        Ok(v) => ok_reply(&v),
        Err(e) => {
            if matches!(e, StoreError::Io(_)) {
                tracing::error!(error = %e, "store write failed");
            }
            err_reply(e.code(), &e.to_string())
        }
    }
}

pub fn handle_request(store: &Store, opcode: u8, body: &[u8]) -> Vec<u8> {
    macro_rules! req {
        ($t:ty) => {
            match decode_request::<$t>(body) {
                Ok(r) => r,
                Err(reply) => return reply,
            }
        };
    }
    let save =
        |r: Result<crate::SaveOutcome, StoreError>| reply(r.map(|outcome| SaveReply { outcome }));
    match opcode {
        OP_SAVE_RESULT => save(store.save_result(&req!(ResultRecord))),
        OP_QUERY => {
            let q = req!(QueryRequest);
            reply(
                store
                    .query_results(q.task_id, q.node_id)
                    .map(|results| QueryReply { results }),
            )
        }
        OP_SAVE_FEEDBACK => save(store.save_feedback(&req!(FeedbackRecord))),
        OP_EXPORT => {
            let f = req!(FeedbackFilter);
            reply(
                store
                    .export_feedback(&f)
                    .map(|feedback| ExportReply { feedback }),
            )
        }
        OP_SAVE_TASK => save(store.save_task(&req!(TaskRecord))),
        OP_GET_TASK => {
            let q = req!(GetTaskRequest);
            reply(store.get_task(q.task_id).map(|task| GetTaskReply { task }))
        }
        other => err_reply("BAD_REQUEST", &format!("unknown opcode {other}")),
    }
}

pub fn serve(store: Arc<Store>, listener: TcpListener) -> std::io::Result<()> {
    serve_frames(
        listener,
        Arc::new(move |op, body: &[u8]| handle_request(&store, op, body)),
    )
}
