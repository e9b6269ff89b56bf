use std::collections::BTreeMap;

use thiserror::Error;
use vpe_core::flowgraph::{Payload, Producer, TaskData};
use vpe_core::{input_topic_name, ModuleDescriptor, ModuleId, NodeId};

/// Where module descriptors of other modules come from.
pub trait Directory: Send + Sync {
    fn lookup(&self, module: &ModuleId) -> Result<Option<ModuleDescriptor>, String>;
}

/// A fixed set of descriptors.
#[derive(Debug, Clone, Default)]
pub struct StaticDirectory {
    modules: BTreeMap<ModuleId, ModuleDescriptor>,
}

impl StaticDirectory {
    pub fn new(descriptors: impl IntoIterator<Item = ModuleDescriptor>) -> Self {
        Self {
            modules: descriptors
                .into_iter()
                .map(|d| (d.module_id.clone(), d))
                .collect(),
        }
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ModuleDescriptor> {
        self.modules.values()
    }
}

impl Directory for StaticDirectory {
    fn lookup(&self, module: &ModuleId) -> Result<Option<ModuleDescriptor>, String> {
        Ok(self.modules.get(module).cloned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("ROUTE_MISMATCH: successor node {successor} ({module}) accepts none of {produced:?}")]
    RouteMismatch {
        successor: NodeId,
        module: ModuleId,
        produced: Vec<String>,
    },
    #[error("UNKNOWN_MODULE: successor node {successor} names unregistered module {module}")]
    UnknownModule { successor: NodeId, module: ModuleId },
    #[error("NOT_FOUND: node {0} not in graph")]
    NotFound(NodeId),
    #[error("LOOKUP_FAIL: {0}")]
    Lookup(String),
}

impl RouteError {
    pub fn code(&self) -> &'static str {
        match self {
            RouteError::RouteMismatch { .. } => "ROUTE_MISMATCH",
            RouteError::UnknownModule { .. } => "UNKNOWN_MODULE",
            RouteError::NotFound(_) => "NOT_FOUND",
            RouteError::Lookup(_) => "LOOKUP_FAIL",
        }
    }

    /// Retrying may succeed (the directory was unreachable).
    pub fn is_transient(&self) -> bool {
        matches!(self, RouteError::Lookup(_))
    }
}

/// One message per (successor, accepted output), in successor then output
/// order. Outputs are re-tagged as produced by `executed`.
pub fn route_outputs(
    td: &TaskData,
    executed: NodeId,
    outputs: &[Payload],
    directory: &dyn Directory,
) -> Result<Vec<(String, TaskData)>, RouteError> {
    let successors = td
        .graph
        .successors(executed)
        .map_err(|_| RouteError::NotFound(executed))?;
    let mut out = Vec::new();
    for s in successors {
        let node = td.graph.node(s).ok_or(RouteError::NotFound(s))?;
        let desc = directory
            .lookup(&node.module)
            .map_err(RouteError::Lookup)?
            .ok_or_else(|| RouteError::UnknownModule {
                successor: s,
                module: node.module.clone(),
            })?;
        let before = out.len();
        for p in outputs.iter().filter(|p| desc.accepts(&p.datatype)) {
            let payload = Payload {
                producer: Producer::Node(executed),
                ..p.clone()
            };
            out.push((
                input_topic_name(&desc.module_id, &p.datatype),
                TaskData {
                    task_id: td.task_id,
                    nme: s,
                    graph: td.graph.clone(),
                    payload,
                },
            ));
        }
        if out.len() == before {
            return Err(RouteError::RouteMismatch {
                successor: s,
                module: node.module.clone(),
                produced: outputs.iter().map(|p| p.datatype.to_string()).collect(),
            });
        }
    }
    Ok(out)
}
