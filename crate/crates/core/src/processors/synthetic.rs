//! Seeded synthetic "video": a handful of people and vehicles wandering on a
//! 256x256 plane, each visible in a frame with probability 0.7.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flowgraph::FlowNode;

use super::{
    datatypes, output, to_records, Inputs, Output, Processor, ProcessorContract, ProcessorError,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub object_id: u32,
    pub x: u8,
    pub y: u8,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticFrame {
    pub frame_index: u32,
    pub objects: Vec<SceneObject>,
}

const VEHICLE_ID_BASE: u32 = 1000;

pub fn generate_frames(count: u32, seed: u64) -> Vec<SyntheticFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let people = rng.random_range(3..=8u32);
    let vehicles = rng.random_range(0..=3u32);
    let mut actors: Vec<(u32, &str, i32, i32)> = (1..=people)
        .map(|id| (id, "person"))
        .chain((1..=vehicles).map(|id| (VEHICLE_ID_BASE + id, "vehicle")))
        .map(|(id, label)| {
            (
                id,
                label,
                rng.random_range(0..=255),
                rng.random_range(0..=255),
            )
        })
        .collect();

    (0..count)
        .map(|frame_index| {
            let mut objects = Vec::new();
            for (id, label, x, y) in actors.iter_mut() {
                *x = (*x + rng.random_range(-8..=8)).clamp(0, 255);
                *y = (*y + rng.random_range(-8..=8)).clamp(0, 255);
                if rng.random_bool(0.7) {
                    objects.push(SceneObject {
                        object_id: *id,
                        x: *x as u8,
                        y: *y as u8,
                        label: (*label).to_owned(),
                    });
                }
            }
            SyntheticFrame {
                frame_index,
                objects,
            }
        })
        .collect()
}

/// `frame-source`: ignores its input records and emits `count` frames from
/// the generator seeded with `seed` (default 0).
#[derive(Debug)]
pub struct FrameSource {
    contract: ProcessorContract,
}

impl FrameSource {
    pub fn new() -> Self {
        Self {
            contract: ProcessorContract::new(
                "frame-source",
                &[datatypes::VIDEO],
                &[datatypes::FRAME],
            ),
        }
    }
}

impl Default for FrameSource {
    fn default() -> Self {
        Self::new()
    }
}

impl Processor for FrameSource {
    fn contract(&self) -> &ProcessorContract {
        &self.contract
    }

    fn process(&self, node: &FlowNode, inputs: &Inputs) -> Result<Vec<Output>, ProcessorError> {
        super::records_of(inputs, datatypes::VIDEO)?;
        let count: i64 = node
            .param("count")
            .ok_or_else(|| ProcessorError::BadParam("missing count".into()))?
            .parse()
            .map_err(|e| ProcessorError::BadParam(format!("count: {e}")))?;
        let count = u32::try_from(count)
            .map_err(|_| ProcessorError::BadParam(format!("count must be >= 0, got {count}")))?;
        let seed: u64 = match node.param("seed") {
            Some(s) => s
                .parse()
                .map_err(|e| ProcessorError::BadParam(format!("seed: {e}")))?,
            None => 0,
        };
        Ok(vec![output(
            datatypes::FRAME,
            to_records(&generate_frames(count, seed)),
        )])
    }
}
