//! Shared core of the video parsing platform: task flow graphs and the
//! TaskData envelope, module descriptors and topic naming, the processor
//! contract with its toy vision stages, and the storage and wire primitives
//! the services are built on.

pub mod flowgraph;
pub mod module;
pub mod processors;
pub mod recordlog;
pub mod token;
pub mod wire;

pub use flowgraph::{
    decode_taskdata, encode_taskdata, validate_graph, FlowGraph, FlowLink, FlowNode, NodeId,
    Payload, Producer, TaskData, ValidationReport,
};
pub use module::{input_topic_name, ModuleDescriptor};
pub use token::{DataType, ModuleId};

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
