//! Canonical TaskData encoding.
//!
//! UTF-8 JSON, keys in the fixed order `v`, `task_id`, `nme`, `graph`,
//! `payload`; nodes sorted by id, links by (from, to); opaque bytes in
//! standard padded base64. Every encoding opens with `{"v":1,`.
//!
//! ```text
//! {"v":1,"task_id":"…","nme":2,
//!  "graph":{"nodes":[{"id":0,"module":"A","params":[["k","v"]],"extra":""}],
//!           "links":[{"from":0,"to":2}]},
//!  "payload":{"datatype":"Frame","producer_node":-1,"records":["…"]}}
//! ```

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::token::{DataType, ModuleId};

use super::graph::{FlowGraph, FlowLink, FlowNode, NodeId};
use super::taskdata::{Payload, Producer, TaskData};

pub const WIRE_VERSION: u32 = 1;
pub const MAGIC_PREFIX: &[u8] = b"{\"v\":1,";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("ENCODE_INVALID: {0}")]
    EncodeInvalid(String),
    #[error("DECODE_MALFORMED: {0}")]
    DecodeMalformed(String),
    #[error("DECODE_INVALID: {0}")]
    DecodeInvalid(String),
}

impl CodecError {
    pub fn code(&self) -> &'static str {
        match self {
            CodecError::EncodeInvalid(_) => "ENCODE_INVALID",
            CodecError::DecodeMalformed(_) => "DECODE_MALFORMED",
            CodecError::DecodeInvalid(_) => "DECODE_INVALID",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireTaskData {
    v: u32,
    task_id: String,
    nme: NodeId,
    graph: GraphJson,
    payload: WirePayload,
}

/// JSON form of a flow graph, shared by the TaskData envelope and the HTTP API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphJson {
    pub nodes: Vec<NodeJson>,
    #[serde(default)]
    pub links: Vec<LinkJson>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeJson {
    pub id: NodeId,
    pub module: String,
    #[serde(default)]
    pub params: Vec<(String, String)>,
    #[serde(default)]
    pub extra: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkJson {
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WirePayload {
    datatype: String,
    producer_node: i64,
    records: Vec<String>,
}

/// Which error a failed field conversion maps to.
#[derive(Debug)]
pub enum FieldError {
    /// Bytes that are not what the format says (bad base64, bad UUID text).
    Malformed(String),
    /// Well-formed but violating a domain rule (bad token).
    Invalid(String),
}

impl From<&FlowGraph> for GraphJson {
    fn from(g: &FlowGraph) -> Self {
        let g = g.clone().canonicalized();
        GraphJson {
            nodes: g
                .nodes
                .iter()
                .map(|n| NodeJson {
                    id: n.id,
                    module: n.module.to_string(),
                    params: n.params.clone(),
                    extra: B64.encode(&n.extra),
                })
                .collect(),
            links: g
                .links
                .iter()
                .map(|l| LinkJson {
                    from: l.from,
                    to: l.to,
                })
                .collect(),
        }
    }
}

impl GraphJson {
    /// Converts to the domain graph. Does not check DAG invariants.
    pub fn to_graph(&self) -> Result<FlowGraph, FieldError> {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let module = ModuleId::new(n.module.as_str())
                .map_err(|e| FieldError::Invalid(format!("node {}: {e}", n.id)))?;
            let extra = B64
                .decode(n.extra.as_bytes())
                .map_err(|e| FieldError::Malformed(format!("node {} extra: {e}", n.id)))?;
            nodes.push(FlowNode {
                id: n.id,
                module,
                params: n.params.clone(),
                extra,
            });
        }
        let links = self
            .links
            .iter()
            .map(|l| FlowLink::new(l.from, l.to))
            .collect();
        Ok(FlowGraph::new(nodes, links))
    }
}

pub fn decode_records(records: &[String]) -> Result<Vec<Vec<u8>>, FieldError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            B64.decode(r.as_bytes())
                .map_err(|e| FieldError::Malformed(format!("record {i}: {e}")))
        })
        .collect()
}

pub fn encode_records(records: &[Vec<u8>]) -> Vec<String> {
    records.iter().map(|r| B64.encode(r)).collect()
}

pub fn encode_taskdata(td: &TaskData) -> Result<Vec<u8>, CodecError> {
    td.check().map_err(CodecError::EncodeInvalid)?;
    let wire = WireTaskData {
        v: WIRE_VERSION,
        task_id: td.task_id.hyphenated().to_string(),
        nme: td.nme,
        graph: GraphJson::from(&td.graph),
        payload: WirePayload {
            datatype: td.payload.datatype.to_string(),
            producer_node: td.payload.producer.to_wire(),
            records: encode_records(&td.payload.records),
        },
    };
    serde_json::to_vec(&wire).map_err(|e| CodecError::EncodeInvalid(e.to_string()))
}

pub fn decode_taskdata(bytes: &[u8]) -> Result<TaskData, CodecError> {
    let wire: WireTaskData =
        serde_json::from_slice(bytes).map_err(|e| CodecError::DecodeMalformed(e.to_string()))?;
    if wire.v != WIRE_VERSION {
        return Err(CodecError::DecodeMalformed(format!(
            "unsupported version {}",
            wire.v
        )));
    }
    let field = |e: FieldError| match e {
        FieldError::Malformed(s) => CodecError::DecodeMalformed(s),
        FieldError::Invalid(s) => CodecError::DecodeInvalid(s),
    };
    let task_id = parse_task_id(&wire.task_id).map_err(field)?;
    let graph = wire.graph.to_graph().map_err(field)?.canonicalized();
    let datatype = DataType::new(wire.payload.datatype)
        .map_err(|e| CodecError::DecodeInvalid(e.to_string()))?;
    let producer = Producer::from_wire(wire.payload.producer_node).ok_or_else(|| {
        CodecError::DecodeInvalid(format!("bad producer_node {}", wire.payload.producer_node))
    })?;
    let records = decode_records(&wire.payload.records).map_err(field)?;
    let td = TaskData {
        task_id,
        nme: wire.nme,
        graph,
        payload: Payload {
            datatype,
            records,
            producer,
        },
    };
    td.check().map_err(CodecError::DecodeInvalid)?;
    Ok(td)
}

/// Parses the 36-character hyphenated UUID form.
pub fn parse_task_id(s: &str) -> Result<Uuid, FieldError> {
    if s.len() != 36 {
        return Err(FieldError::Malformed(format!(
            "task_id {s:?} is not hyphenated UUID text"
        )));
    }
    Uuid::parse_str(s).map_err(|e| FieldError::Malformed(format!("task_id: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(s: &str) -> ModuleId {
        ModuleId::new(s).unwrap()
    }

    fn sample() -> TaskData {
        TaskData {
            task_id: Uuid::parse_str("6f1c2a3e-8b7d-4c1e-9a0f-123456789abc").unwrap(),
            nme: 2,
            graph: FlowGraph::new(
                vec![
                    FlowNode::new(2, m("C")),
                    FlowNode::new(0, m("A")).with_param("count", "3"),
                    FlowNode {
                        extra: vec![0, 255, 7],
                        ..FlowNode::new(1, m("B"))
                    },
                ],
                vec![
                    FlowLink::new(1, 2),
                    FlowLink::new(0, 2),
                    FlowLink::new(0, 1),
                ],
            ),
            payload: Payload::new(DataType::new("Frame").unwrap(), vec![], Producer::Node(0)),
        }
    }

    #[test]
    fn canonical_bytes() {
        let bytes = encode_taskdata(&sample()).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(bytes.starts_with(MAGIC_PREFIX));
        assert_eq!(
            text,
            concat!(
                r#"{"v":1,"task_id":"6f1c2a3e-8b7d-4c1e-9a0f-123456789abc","nme":2,"#,
                r#""graph":{"nodes":[{"id":0,"module":"A","params":[["count","3"]],"extra":""},"#,
                r#"{"id":1,"module":"B","params":[],"extra":"AP8H"},"#,
                r#"{"id":2,"module":"C","params":[],"extra":""}],"#,
                r#""links":[{"from":0,"to":1},{"from":0,"to":2},{"from":1,"to":2}]},"#,
                r#""payload":{"datatype":"Frame","producer_node":0,"records":[]}}"#
            )
        );
        assert!(text.contains(r#""records":[]"#));
    }

    #[test]
    fn round_trip_and_determinism() {
        let td = sample();
        let a = encode_taskdata(&td).unwrap();
        let b = encode_taskdata(&td.clone()).unwrap();
        assert_eq!(a, b);
        assert_eq!(decode_taskdata(&a).unwrap(), td);
    }

    #[test]
    fn encode_rejects_invariant_violation() {
        let mut td = sample();
        td.nme = 9;
        assert_eq!(encode_taskdata(&td).unwrap_err().code(), "ENCODE_INVALID");
    }

    #[test]
    fn truncated_is_malformed() {
        let bytes = encode_taskdata(&sample()).unwrap();
        for cut in [0, 1, 10, bytes.len() / 2, bytes.len() - 1] {
            assert_eq!(
                decode_taskdata(&bytes[..cut]).unwrap_err().code(),
                "DECODE_MALFORMED",
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn nme_outside_graph_is_invalid() {
        let text = String::from_utf8(encode_taskdata(&sample()).unwrap()).unwrap();
        let text = text.replace(r#""nme":2"#, r#""nme":7"#);
        assert_eq!(
            decode_taskdata(text.as_bytes()).unwrap_err().code(),
            "DECODE_INVALID"
        );
    }

    #[test]
    fn accepts_any_field_order() {
        let text = r#"{"payload":{"records":["AQI="],"producer_node":-1,"datatype":"Frame"},
            "graph":{"links":[],"nodes":[{"extra":"","params":[],"module":"A","id":0}]},
            "nme":0,"task_id":"6f1c2a3e-8b7d-4c1e-9a0f-123456789abc","v":1}"#;
        let td = decode_taskdata(text.as_bytes()).unwrap();
        assert_eq!(td.payload.records, vec![vec![1, 2]]);
        assert_eq!(td.payload.producer, Producer::Source);
    }

    #[test]
    fn wrong_version_and_bad_fields() {
        let good = String::from_utf8(encode_taskdata(&sample()).unwrap()).unwrap();
        let v2 = good.replacen(r#"{"v":1,"#, r#"{"v":2,"#, 1);
        assert_eq!(
            decode_taskdata(v2.as_bytes()).unwrap_err().code(),
            "DECODE_MALFORMED"
        );
        let bad_b64 = good.replace(r#""extra":"AP8H""#, r#""extra":"@@""#);
        assert_eq!(
            decode_taskdata(bad_b64.as_bytes()).unwrap_err().code(),
            "DECODE_MALFORMED"
        );
        let bad_token = good.replace(r#""module":"C""#, r#""module":"9C""#);
        assert_eq!(
            decode_taskdata(bad_token.as_bytes()).unwrap_err().code(),
            "DECODE_INVALID"
        );
        let cyc = good.replace(r#"{"from":0,"to":1}"#, r#"{"from":2,"to":0}"#);
        assert_eq!(
            decode_taskdata(cyc.as_bytes()).unwrap_err().code(),
            "DECODE_INVALID"
        );
        let not_pred = good.replace(r#""producer_node":0"#, r#""producer_node":2"#);
        assert_eq!(
            decode_taskdata(not_pred.as_bytes()).unwrap_err().code(),
            "DECODE_INVALID"
        );
        let simple_uuid = good.replace(
            "6f1c2a3e-8b7d-4c1e-9a0f-123456789abc",
            "6f1c2a3e8b7d4c1e9a0f123456789abc",
        );
        assert_eq!(
            decode_taskdata(simple_uuid.as_bytes()).unwrap_err().code(),
            "DECODE_MALFORMED"
        );
    }
}
