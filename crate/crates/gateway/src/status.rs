use std::collections::BTreeMap;
use std::time::Duration;

use vpe_metastore::{ResultRecord, TaskRecord};

use crate::api::{NodeState, NodeStatus, Overall, TaskStatus};

/// Task status from the stored graph and results alone.
pub fn derive_status(
    task: &TaskRecord,
    results: &[ResultRecord],
    now: u64,
    stall_after: Duration,
) -> TaskStatus {
    let done: BTreeMap<_, _> = results.iter().map(|r| (r.node_id, r.created_at)).collect();
    let last_activity = results
        .iter()
        .map(|r| r.created_at)
        .chain([task.created_at])
        .max()
        .unwrap_or(task.created_at);
    let stalled = now.saturating_sub(last_activity) > stall_after.as_millis() as u64;
    let mut nodes: Vec<NodeStatus> = task
        .graph
        .nodes
        .iter()
        .map(|n| {
            let done_at = done.get(&n.id).copied();
            let state = match (done_at, stalled) {
                (Some(_), _) => NodeState::Done,
                (None, true) => NodeState::Stalled,
                (None, false) => NodeState::Waiting,
            };
            NodeStatus {
                node_id: n.id,
                module: n.module.clone(),
                state,
                done_at,
            }
        })
        .collect();
    nodes.sort_by_key(|n| n.node_id);
    let overall = if nodes.iter().all(|n| n.state == NodeState::Done) {
        Overall::Complete
    } else if nodes.iter().any(|n| n.state == NodeState::Stalled) {
        Overall::Stalled
    } else {
        Overall::Running
    };
    TaskStatus {
        task_id: task.task_id,
        overall,
        nodes,
        created_at: task.created_at,
        last_activity,
    }
}
