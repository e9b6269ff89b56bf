//! Processor plugin contract and the built-in toy vision stages.
//!
//! A processor turns the accumulated inputs of one node (one payload per
//! producer) into zero or more output payloads. The built-in stages are pure
//! stand-ins for real vision algorithms:
//!
//! ```text
//! Video ─frame-source→ Frame ─detector→ Pedestrian-BBox ─tracker→ Pedestrian-Track
//!   ─attr-recognizer→ Pedestrian-Attribute ─reid-ranker→ ReID-Rank
//! ```
//!
//! plus `relay`, which forwards `Blob` records and is handy for wiring tests.

mod relay;
mod synthetic;
mod vision;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::flowgraph::{FlowNode, Payload, Producer};
use crate::token::DataType;

pub use relay::Relay;
pub use synthetic::{generate_frames, FrameSource, SceneObject, SyntheticFrame};
pub use vision::{
    attribute_vector, AttrRecognizer, AttributeRecord, BBoxRecord, Detection, Detector, RankRecord,
    ReidRanker, TrackRecord, Tracker, ATTRIBUTE_SLOTS,
};

pub mod datatypes {
    pub const VIDEO: &str = "Video";
    pub const FRAME: &str = "Frame";
    pub const BBOX: &str = "Pedestrian-BBox";
    pub const TRACK: &str = "Pedestrian-Track";
    pub const ATTRIBUTE: &str = "Pedestrian-Attribute";
    pub const REID_RANK: &str = "ReID-Rank";
    pub const BLOB: &str = "Blob";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProcessorContract {
    pub processor_id: String,
    pub accepts: BTreeSet<DataType>,
    pub produces: BTreeSet<DataType>,
    /// Same inputs and params always give byte-identical outputs.
    pub pure: bool,
    /// Calls must be serialized by the host.
    pub single_threaded: bool,
}

impl ProcessorContract {
    pub fn new(id: &str, accepts: &[&str], produces: &[&str]) -> Self {
        let set = |v: &[&str]| {
            v.iter()
                .map(|s| DataType::new(*s).expect("static datatype"))
                .collect()
        };
        Self {
            processor_id: id.to_owned(),
            accepts: set(accepts),
            produces: set(produces),
            pure: true,
            single_threaded: false,
        }
    }
}

/// One produced payload, before the host tags it with its producer node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    pub datatype: DataType,
    pub records: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProcessorError {
    #[error("BAD_PARAM: {0}")]
    BadParam(String),
    #[error("TYPE_MISMATCH: expected {expected}, got {got}")]
    TypeMismatch { expected: String, got: String },
    #[error("BAD_RECORD: {0}")]
    BadRecord(String),
    #[error("EXEC_FAIL: {0}")]
    Failed(String),
}

impl ProcessorError {
    pub fn code(&self) -> &'static str {
        match self {
            ProcessorError::BadParam(_) => "BAD_PARAM",
            ProcessorError::TypeMismatch { .. } => "TYPE_MISMATCH",
            ProcessorError::BadRecord(_) => "BAD_RECORD",
            ProcessorError::Failed(_) => "EXEC_FAIL",
        }
    }
}

pub type Inputs = BTreeMap<Producer, Payload>;

pub trait Processor: Send + Sync {
    fn contract(&self) -> &ProcessorContract;

    /// Runs one node execution. `inputs` holds one payload per producer.
    fn process(&self, node: &FlowNode, inputs: &Inputs) -> Result<Vec<Output>, ProcessorError>;
}

impl fmt::Debug for dyn Processor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Processor({})", self.contract().processor_id)
    }
}

/// Fails if an output carries a datatype the contract does not declare.
pub fn check_outputs(
    contract: &ProcessorContract,
    outputs: &[Output],
) -> Result<(), ProcessorError> {
    for o in outputs {
        if !contract.produces.contains(&o.datatype) {
            return Err(ProcessorError::Failed(format!(
                "{} emitted undeclared datatype {}",
                contract.processor_id, o.datatype
            )));
        }
    }
    Ok(())
}

/// Concatenates the records of every input in producer order, requiring each
/// input to carry `expected`.
pub fn records_of<'a>(inputs: &'a Inputs, expected: &str) -> Result<Vec<&'a [u8]>, ProcessorError> {
    let mut out = Vec::new();
    for p in inputs.values() {
        if p.datatype.as_str() != expected {
            return Err(ProcessorError::TypeMismatch {
                expected: expected.to_owned(),
                got: p.datatype.to_string(),
            });
        }
        out.extend(p.records.iter().map(Vec::as_slice));
    }
    Ok(out)
}

pub(crate) fn parse_records<T: serde::de::DeserializeOwned>(
    records: &[&[u8]],
) -> Result<Vec<T>, ProcessorError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            serde_json::from_slice(r)
                .map_err(|e| ProcessorError::BadRecord(format!("record {i}: {e}")))
        })
        .collect()
}

pub(crate) fn to_records<T: Serialize>(items: &[T]) -> Vec<Vec<u8>> {
    items
        .iter()
        .map(|i| serde_json::to_vec(i).expect("record serializes"))
        .collect()
}

pub(crate) fn output(datatype: &str, records: Vec<Vec<u8>>) -> Output {
    Output {
        datatype: DataType::new(datatype).expect("static datatype"),
        records,
    }
}

#[derive(Clone, Default)]
pub struct ProcessorRegistry {
    map: BTreeMap<String, Arc<dyn Processor>>,
}

impl fmt::Debug for ProcessorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.map.keys()).finish()
    }
}

impl ProcessorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The toy pipeline stages and `relay`.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(FrameSource::new()));
        r.register(Arc::new(Detector::new()));
        r.register(Arc::new(Tracker::new()));
        r.register(Arc::new(AttrRecognizer::new()));
        r.register(Arc::new(ReidRanker::new()));
        r.register(Arc::new(Relay::new()));
        r
    }

    pub fn register(&mut self, p: Arc<dyn Processor>) {
        self.map.insert(p.contract().processor_id.clone(), p);
    }

    pub fn get(&self, id: &str) -> Option<Arc<dyn Processor>> {
        self.map.get(id).cloned()
    }

    pub fn contracts(&self) -> impl Iterator<Item = &ProcessorContract> {
        self.map.values().map(|p| p.contract())
    }
}
