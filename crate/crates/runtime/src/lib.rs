//! Module host and launcher.
//!
//! A module owns one input topic per accepted datatype and runs a consume
//! loop on each. Messages name the node to execute; a node with several
//! predecessors waits until each has delivered. Outputs are routed to the
//! input topics of the successor nodes' modules.

pub mod accumulator;
pub mod config;
pub mod fault;
mod host;
pub mod launcher;
pub mod ledger;
pub mod routing;

pub use accumulator::{AccumulateError, Accumulated, Accumulator, AccumulatorEntry};
pub use config::ModuleConfig;
pub use fault::{FaultAction, FaultPoint, FAULT_ENV};
pub use host::{
    result_record, source_taskdata, HostError, HostOptions, Identity, ModuleHost, Observer,
    Reorganize,
};
pub use ledger::ProcessingLedger;
pub use routing::{route_outputs, Directory, RouteError, StaticDirectory};
