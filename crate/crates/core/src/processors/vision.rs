use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::flowgraph::FlowNode;

use super::synthetic::SyntheticFrame;
use super::{
    datatypes, output, parse_records, records_of, to_records, Inputs, Output, Processor,
    ProcessorContract, ProcessorError,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBoxRecord {
    pub frame_index: u32,
    pub object_id: u32,
    pub x: u8,
    pub y: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: u32,
    pub x: u8,
    pub y: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub object_id: u32,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub object_id: u32,
    /// `|`-separated attribute values, one per slot.
    pub attributes: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRecord {
    pub rank: u32,
    pub object_id: u32,
    pub score: u32,
    pub attributes: String,
}

/// `detector`: one bbox per `person` object, in frame then object order.
#[derive(Debug)]
pub struct Detector {
    contract: ProcessorContract,
}

impl Detector {
    pub fn new() -> Self {
        Self {
            contract: ProcessorContract::new("detector", &[datatypes::FRAME], &[datatypes::BBOX]),
        }
    }
}

impl Default for Detector {
    fn default() -> Self {
        Self::new()
    }
}

impl Processor for Detector {
    fn contract(&self) -> &ProcessorContract {
        &self.contract
    }

    fn process(&self, _node: &FlowNode, inputs: &Inputs) -> Result<Vec<Output>, ProcessorError> {
        let frames: Vec<SyntheticFrame> = parse_records(&records_of(inputs, datatypes::FRAME)?)?;
        let boxes: Vec<BBoxRecord> = frames
            .iter()
            .flat_map(|f| {
                f.objects
                    .iter()
                    .filter(|o| o.label == "person")
                    .map(|o| BBoxRecord {
                        frame_index: f.frame_index,
                        object_id: o.object_id,
                        x: o.x,
                        y: o.y,
                    })
            })
            .collect();
        Ok(vec![output(datatypes::BBOX, to_records(&boxes))])
    }
}

/// `tracker`: groups bboxes by object id into tracks sorted by frame.
#[derive(Debug)]
pub struct Tracker {
    contract: ProcessorContract,
}

impl Tracker {
    pub fn new() -> Self {
        Self {
            contract: ProcessorContract::new("tracker", &[datatypes::BBOX], &[datatypes::TRACK]),
        }
    }
}

impl Default for Tracker {
    fn default() -> Self {
        Self::new()
    }
}

impl Processor for Tracker {
    fn contract(&self) -> &ProcessorContract {
        &self.contract
    }

    fn process(&self, _node: &FlowNode, inputs: &Inputs) -> Result<Vec<Output>, ProcessorError> {
        let boxes: Vec<BBoxRecord> = parse_records(&records_of(inputs, datatypes::BBOX)?)?;
        let mut tracks: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
        for b in boxes {
            tracks.entry(b.object_id).or_default().push(Detection {
                frame_index: b.frame_index,
                x: b.x,
                y: b.y,
            });
        }
        let tracks: Vec<TrackRecord> = tracks
            .into_iter()
            .map(|(object_id, mut detections)| {
                detections.sort();
                TrackRecord {
                    object_id,
                    detections,
                }
            })
            .collect();
        Ok(vec![output(datatypes::TRACK, to_records(&tracks))])
    }
}

/// Attribute vocabulary, one slot per visual property.
pub const ATTRIBUTE_SLOTS: [&[&str]; 5] = [
    &["male", "female"],
    &["backpack", "handbag", "no-bag"],
    &["red", "blue", "green", "black", "white"],
    &["trousers", "skirt", "shorts"],
    &["hat", "no-hat"],
];

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic attribute vector of an object, e.g. `male|backpack|red|trousers|no-hat`.
pub fn attribute_vector(object_id: u32) -> String {
    let mut h = splitmix64(u64::from(object_id));
    let mut parts = Vec::with_capacity(ATTRIBUTE_SLOTS.len());
    for slot in ATTRIBUTE_SLOTS {
        let n = slot.len() as u64;
        parts.push(slot[(h % n) as usize]);
        h /= n;
    }
    parts.join("|")
}

/// `attr-recognizer`: one attribute record per track.
#[derive(Debug)]
pub struct AttrRecognizer {
    contract: ProcessorContract,
}

impl AttrRecognizer {
    pub fn new() -> Self {
        Self {
            contract: ProcessorContract::new(
                "attr-recognizer",
                &[datatypes::TRACK],
                &[datatypes::ATTRIBUTE],
            ),
        }
    }
}

impl Default for AttrRecognizer {
    fn default() -> Self {
        Self::new()
    }
}

impl Processor for AttrRecognizer {
    fn contract(&self) -> &ProcessorContract {
        &self.contract
    }

    fn process(&self, _node: &FlowNode, inputs: &Inputs) -> Result<Vec<Output>, ProcessorError> {
        let tracks: Vec<TrackRecord> = parse_records(&records_of(inputs, datatypes::TRACK)?)?;
        let attrs: Vec<AttributeRecord> = tracks
            .iter()
            .map(|t| AttributeRecord {
                object_id: t.object_id,
                attributes: attribute_vector(t.object_id),
            })
            .collect();
        Ok(vec![output(datatypes::ATTRIBUTE, to_records(&attrs))])
    }
}

/// `reid-ranker`: orders candidates by how many attribute values they share
/// with the `target` param, best first, ties by ascending object id.
#[derive(Debug)]
pub struct ReidRanker {
    contract: ProcessorContract,
}

impl ReidRanker {
    pub fn new() -> Self {
        Self {
            contract: ProcessorContract::new(
                "reid-ranker",
                &[datatypes::ATTRIBUTE],
                &[datatypes::REID_RANK],
            ),
        }
    }
}

impl Default for ReidRanker {
    fn default() -> Self {
        Self::new()
    }
}

fn parse_attribute_set(s: &str) -> Result<BTreeSet<&str>, ProcessorError> {
    let parts: Vec<&str> = s.split('|').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ProcessorError::BadParam(format!(
            "{s:?} is not an attribute vector"
        )));
    }
    Ok(parts.into_iter().collect())
}

impl Processor for ReidRanker {
    fn contract(&self) -> &ProcessorContract {
        &self.contract
    }

    fn process(&self, node: &FlowNode, inputs: &Inputs) -> Result<Vec<Output>, ProcessorError> {
        let target = node
            .param("target")
            .ok_or_else(|| ProcessorError::BadParam("missing target".into()))?;
        let target = parse_attribute_set(target)?;
        let candidates: Vec<AttributeRecord> =
            parse_records(&records_of(inputs, datatypes::ATTRIBUTE)?)?;
        let mut seen = BTreeSet::new();
        let mut scored = Vec::new();
        for c in candidates {
            if !seen.insert(c.object_id) {
                continue;
            }
            let score = parse_attribute_set(&c.attributes)
                .map_err(|e| ProcessorError::BadRecord(e.to_string()))?
                .intersection(&target)
                .count() as u32;
            scored.push((score, c));
        }
        scored.sort_by(|(sa, a), (sb, b)| sb.cmp(sa).then(a.object_id.cmp(&b.object_id)));
        let ranks: Vec<RankRecord> = scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, c))| RankRecord {
                rank: i as u32 + 1,
                object_id: c.object_id,
                score,
                attributes: c.attributes,
            })
            .collect();
        Ok(vec![output(datatypes::REID_RANK, to_records(&ranks))])
    }
}
