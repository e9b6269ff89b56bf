use serde::{Deserialize, Serialize};
use uuid::Uuid;
use vpe_core::flowgraph::GraphJson;
use vpe_core::NodeId;

use crate::StoreError;

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub mod list {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[Vec<u8>], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|r| STANDARD.encode(r)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<u8>>, D::Error> {
            Vec::<String>::deserialize(d)?
                .iter()
                .map(|s| STANDARD.decode(s).map_err(D::Error::custom))
                .collect()
        }
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(b) => s.serialize_some(&STANDARD.encode(b)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
            Option::<String>::deserialize(d)?
                .map(|s| STANDARD.decode(s).map_err(D::Error::custom))
                .transpose()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SaveOutcome {
    Stored,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub task_id: Uuid,
    pub node_id: NodeId,
    pub module_id: String,
    pub datatype: String,
    #[serde(with = "b64::list")]
    pub records: Vec<Vec<u8>>,
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeedbackKind {
    Satisfaction,
    Selection,
    Revision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRecord {
    pub feedback_id: Uuid,
    pub task_id: Uuid,
    pub node_id: NodeId,
    pub kind: FeedbackKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub satisfaction: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_record_indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "b64::opt")]
    pub revision: Option<Vec<u8>>,
    pub created_at: u64,
}

impl FeedbackRecord {
    /// Checks the kind/field pairing and the satisfaction scale. Index bounds
    /// need the referenced result and are checked by the store.
    pub fn check_shape(&self) -> Result<(), StoreError> {
        let bad = |m: &str| Err(StoreError::BadFeedback(m.to_owned()));
        let (s, i, r) = (
            self.satisfaction.is_some(),
            self.selected_record_indices.is_some(),
            self.revision.is_some(),
        );
        match self.kind {
            FeedbackKind::Satisfaction if !(s && !i && !r) => {
                bad("SATISFACTION carries satisfaction only")
            }
            FeedbackKind::Selection if !(!s && i && !r) => {
                bad("SELECTION carries selected_record_indices only")
            }
            FeedbackKind::Revision if !(!s && !i && r) => bad("REVISION carries revision only"),
            _ => match self.satisfaction {
                Some(v) if !(1..=5).contains(&v) => bad(&format!("satisfaction {v} outside 1..=5")),
                _ => Ok(()),
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<FeedbackKind>,
    /// Inclusive lower bound on `created_at`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub since: Option<u64>,
}

/// A submitted task's graph, kept so status can be derived without asking
/// any module.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub task_id: Uuid,
    pub graph: GraphJson,
    pub created_at: u64,
}
