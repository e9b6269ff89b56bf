//! Task flow graphs and the TaskData envelope.
//!
//! A task is a DAG of [`FlowNode`]s, each binding a module with parameters and
//! extra data; links direct a node's results to its successors. Every message
//! on the bus carries a [`TaskData`]: the sender's payload, the id of the node
//! to execute next (`nme`), and the whole graph.
//!
//! `nme` is a node id rather than a module id, so a module that appears on
//! several nodes of one graph can still tell which execution is being asked of
//! it.

mod codec;
mod graph;
mod taskdata;
mod validate;

use thiserror::Error;

use crate::token::ModuleId;

pub use codec::{
    decode_records, decode_taskdata, encode_records, encode_taskdata, parse_task_id, CodecError,
    FieldError, GraphJson, LinkJson, NodeJson, MAGIC_PREFIX, WIRE_VERSION,
};
pub use graph::{FlowGraph, FlowLink, FlowNode, NodeId};
pub use taskdata::{Payload, Producer, TaskData};
pub use validate::{check_routes, validate_graph, Issue, IssueCode, ValidationReport};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("NOT_FOUND: node {0} is not in the graph")]
    NotFound(NodeId),
    #[error("CYCLE: {0}")]
    Cycle(String),
    #[error("invalid graph: {0:?}")]
    Invalid(ValidationReport),
    #[error("MISROUTED: node {nme} belongs to module {expected}, not {actual}")]
    Misrouted {
        nme: NodeId,
        expected: ModuleId,
        actual: ModuleId,
    },
}

impl GraphError {
    pub fn code(&self) -> &'static str {
        match self {
            GraphError::NotFound(_) => "NOT_FOUND",
            GraphError::Cycle(_) => "CYCLE",
            GraphError::Invalid(r) => r
                .errors
                .first()
                .map(|e| e.code.as_str())
                .unwrap_or("INVALID"),
            GraphError::Misrouted { .. } => "MISROUTED",
        }
    }
}

/// Free-function form of [`FlowGraph::topo_order`].
pub fn topo_order(graph: &FlowGraph) -> Result<Vec<NodeId>, GraphError> {
    graph.topo_order()
}

pub fn predecessors(
    graph: &FlowGraph,
    node: NodeId,
) -> Result<std::collections::BTreeSet<NodeId>, GraphError> {
    graph.predecessors(node)
}

pub fn successors(
    graph: &FlowGraph,
    node: NodeId,
) -> Result<std::collections::BTreeSet<NodeId>, GraphError> {
    graph.successors(node)
}

pub fn locate_self<'a>(td: &'a TaskData, module_id: &ModuleId) -> Result<&'a FlowNode, GraphError> {
    td.locate_self(module_id)
}
