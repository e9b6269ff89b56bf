use std::fmt;

use uuid::Uuid;

use crate::token::{DataType, ModuleId};

use super::graph::{FlowGraph, FlowNode, NodeId};
use super::GraphError;

/// Origin of a payload: the node that produced it, or the gateway for the
/// first message of a task. On the wire the gateway is written as `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Producer {
    Source,
    Node(NodeId),
}

impl Producer {
    pub const SOURCE_SENTINEL: i64 = -1;

    pub fn to_wire(self) -> i64 {
        match self {
            Producer::Source => Self::SOURCE_SENTINEL,
            Producer::Node(id) => i64::from(id),
        }
    }

    pub fn from_wire(v: i64) -> Option<Self> {
        if v == Self::SOURCE_SENTINEL {
            Some(Producer::Source)
        } else {
            NodeId::try_from(v).ok().map(Producer::Node)
        }
    }
}

impl fmt::Display for Producer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Producer::Source => f.write_str("source"),
            Producer::Node(id) => write!(f, "node {id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Payload {
    pub datatype: DataType,
    pub records: Vec<Vec<u8>>,
    pub producer: Producer,
}

impl Payload {
    pub fn new(datatype: DataType, records: Vec<Vec<u8>>, producer: Producer) -> Self {
        Self {
            datatype,
            records,
            producer,
        }
    }
}

/// The message envelope: payload from the sender, the node to execute next,
/// and the whole flow graph of the task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskData {
    pub task_id: Uuid,
    pub nme: NodeId,
    pub graph: FlowGraph,
    pub payload: Payload,
}

impl TaskData {
    /// Checks the envelope invariants: the graph is a valid DAG, `nme` names
    /// one of its nodes and the payload comes from a predecessor of `nme` (or
    /// from the source sentinel).
    pub fn check(&self) -> Result<(), String> {
        let report = self.graph.validate();
        if !report.ok {
            let codes: Vec<&str> = report.errors.iter().map(|e| e.code.as_str()).collect();
            return Err(format!("graph invalid: {}", codes.join(",")));
        }
        if !self.graph.contains(self.nme) {
            return Err(format!("nme {} is not a node of the graph", self.nme));
        }
        if let Producer::Node(p) = self.payload.producer {
            let preds = self
                .graph
                .predecessors(self.nme)
                .map_err(|e| e.to_string())?;
            if !preds.contains(&p) {
                return Err(format!(
                    "producer node {p} is not a predecessor of nme {}",
                    self.nme
                ));
            }
        }
        Ok(())
    }

    /// Finds the node this message asks `module_id` to execute.
    pub fn locate_self(&self, module_id: &ModuleId) -> Result<&FlowNode, GraphError> {
        let node = self
            .graph
            .node(self.nme)
            .ok_or(GraphError::NotFound(self.nme))?;
        if &node.module != module_id {
            return Err(GraphError::Misrouted {
                nme: self.nme,
                expected: node.module.clone(),
                actual: module_id.clone(),
            });
        }
        Ok(node)
    }
}
