use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::token::ModuleId;

use super::validate::{validate_structure, IssueCode, ValidationReport};
use super::GraphError;

pub type NodeId = u32;

/// One execution of a module inside a task.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowNode {
    pub id: NodeId,
    pub module: ModuleId,
    pub params: Vec<(String, String)>,
    pub extra: Vec<u8>,
}

impl FlowNode {
    pub fn new(id: NodeId, module: ModuleId) -> Self {
        Self {
            id,
            module,
            params: Vec::new(),
            extra: Vec::new(),
        }
    }

    pub fn with_param(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.params.push((key.into(), value.into()));
        self
    }

    /// First value bound to `key`, if any.
    pub fn param(&self, key: &str) -> Option<&str> {
        self.params
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowLink {
    pub from: NodeId,
    pub to: NodeId,
}

impl FlowLink {
    pub fn new(from: NodeId, to: NodeId) -> Self {
        Self { from, to }
    }
}

/// A task's execution plan. Any candidate is representable; use
/// [`validate_graph`](super::validate_graph) to check it.
///
/// Equality ignores the order of the node and link lists.
#[derive(Debug, Clone, Default, Eq)]
pub struct FlowGraph {
    pub nodes: Vec<FlowNode>,
    pub links: Vec<FlowLink>,
}

impl PartialEq for FlowGraph {
    fn eq(&self, other: &Self) -> bool {
        if self.nodes.len() != other.nodes.len() || self.links.len() != other.links.len() {
            return false;
        }
        let a = self.clone().canonicalized();
        let b = other.clone().canonicalized();
        a.nodes == b.nodes && a.links == b.links
    }
}

impl FlowGraph {
    pub fn new(nodes: Vec<FlowNode>, links: Vec<FlowLink>) -> Self {
        Self { nodes, links }
    }

    /// Sorts nodes by id and links by (from, to).
    pub fn canonicalize(&mut self) {
        self.nodes.sort();
        self.links.sort();
    }

    pub fn canonicalized(mut self) -> Self {
        self.canonicalize();
        self
    }

    pub fn node(&self, id: NodeId) -> Option<&FlowNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.iter().any(|n| n.id == id)
    }

    pub fn predecessors(&self, node: NodeId) -> Result<BTreeSet<NodeId>, GraphError> {
        if !self.contains(node) {
            return Err(GraphError::NotFound(node));
        }
        Ok(self
            .links
            .iter()
            .filter(|l| l.to == node)
            .map(|l| l.from)
            .collect())
    }

    pub fn successors(&self, node: NodeId) -> Result<BTreeSet<NodeId>, GraphError> {
        if !self.contains(node) {
            return Err(GraphError::NotFound(node));
        }
        Ok(self
            .links
            .iter()
            .filter(|l| l.from == node)
            .map(|l| l.to)
            .collect())
    }

    /// Nodes without predecessors, ascending.
    pub fn sources(&self) -> Vec<NodeId> {
        let targets: BTreeSet<NodeId> = self.links.iter().map(|l| l.to).collect();
        let ids: BTreeSet<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        ids.difference(&targets).copied().collect()
    }

    /// Linear extension of the graph with ties broken by ascending node id.
    pub fn topo_order(&self) -> Result<Vec<NodeId>, GraphError> {
        let report = validate_structure(self);
        if !report.ok {
            if let Some(cycle) = report.errors.iter().find(|e| e.code == IssueCode::Cycle) {
                return Err(GraphError::Cycle(cycle.detail.clone()));
            }
            return Err(GraphError::Invalid(report));
        }
        let mut indegree: BTreeMap<NodeId, usize> = self.nodes.iter().map(|n| (n.id, 0)).collect();
        let mut out: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for l in &self.links {
            *indegree.get_mut(&l.to).expect("validated") += 1;
            out.entry(l.from).or_default().push(l.to);
        }
        let mut ready: BinaryHeap<Reverse<NodeId>> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(id, _)| Reverse(*id))
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse(id)) = ready.pop() {
            order.push(id);
            for next in out.get(&id).map(Vec::as_slice).unwrap_or_default() {
                let d = indegree.get_mut(next).expect("validated");
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(*next));
                }
            }
        }
        debug_assert_eq!(order.len(), self.nodes.len());
        Ok(order)
    }

    /// Structural check without a module registry.
    pub fn validate(&self) -> ValidationReport {
        validate_structure(self)
    }
}
