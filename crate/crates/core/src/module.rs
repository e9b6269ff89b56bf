//! Module descriptors and topic ownership.
//!
//! A module owns exactly one input topic per accepted datatype, named
//! `<module_id>-<datatype>`, plus a dead-letter topic `<module_id>-DeadLetter`.
//! Names are generated, never parsed: both halves may contain hyphens, so
//! uniqueness is checked by exact string collision at registration.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::token::{DataType, ModuleId};

pub const DEAD_LETTER_SUFFIX: &str = "DeadLetter";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleDescriptor {
    pub module_id: ModuleId,
    pub input_datatypes: BTreeSet<DataType>,
    pub processor_id: String,
    #[serde(default = "one")]
    pub instance_count: u32,
    /// Free-form build label; a relaunch under the same module_id with a new
    /// label stands in for deploying a new version of the module.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DescriptorError {
    #[error("BAD_NAME: processor id {0:?} is not a valid token")]
    BadProcessor(String),
    #[error("BAD_DESCRIPTOR: module {0} declares no input datatypes")]
    NoInputs(ModuleId),
    #[error("BAD_DESCRIPTOR: module {0} has instance_count 0")]
    ZeroInstances(ModuleId),
    #[error("TOPIC_COLLISION: topic {topic} of module {module} is already owned by {owner}")]
    TopicCollision {
        topic: String,
        module: ModuleId,
        owner: ModuleId,
    },
}

impl DescriptorError {
    pub fn code(&self) -> &'static str {
        match self {
            DescriptorError::BadProcessor(_) => "BAD_NAME",
            DescriptorError::NoInputs(_) | DescriptorError::ZeroInstances(_) => "BAD_DESCRIPTOR",
            DescriptorError::TopicCollision { .. } => "TOPIC_COLLISION",
        }
    }
}

impl ModuleDescriptor {
    pub fn new(
        module_id: ModuleId,
        input_datatypes: impl IntoIterator<Item = DataType>,
        processor_id: impl Into<String>,
    ) -> Self {
        Self {
            module_id,
            input_datatypes: input_datatypes.into_iter().collect(),
            processor_id: processor_id.into(),
            instance_count: 1,
            version: None,
        }
    }

    pub fn check(&self) -> Result<(), DescriptorError> {
        if !crate::token::is_token(&self.processor_id) {
            return Err(DescriptorError::BadProcessor(self.processor_id.clone()));
        }
        if self.input_datatypes.is_empty() {
            return Err(DescriptorError::NoInputs(self.module_id.clone()));
        }
        if self.instance_count == 0 {
            return Err(DescriptorError::ZeroInstances(self.module_id.clone()));
        }
        Ok(())
    }

    pub fn accepts(&self, datatype: &DataType) -> bool {
        self.input_datatypes.contains(datatype)
    }

    /// Input topics, one per accepted datatype, in datatype order.
    pub fn owned_topics(&self) -> Vec<(DataType, String)> {
        self.input_datatypes
            .iter()
            .map(|d| (d.clone(), input_topic_name(&self.module_id, d)))
            .collect()
    }

    pub fn dead_letter_topic(&self) -> String {
        dead_letter_topic(&self.module_id)
    }
}

pub fn input_topic_name(module_id: &ModuleId, datatype: &DataType) -> String {
    format!("{module_id}-{datatype}")
}

pub fn dead_letter_topic(module_id: &ModuleId) -> String {
    format!("{module_id}-{DEAD_LETTER_SUFFIX}")
}

/// Checks that `candidate` owns no topic name already owned by another module
/// in `existing`. A descriptor with the same module_id replaces its old entry
/// and is not compared against it.
pub fn check_topic_collisions<'a>(
    candidate: &ModuleDescriptor,
    existing: impl IntoIterator<Item = &'a ModuleDescriptor>,
) -> Result<(), DescriptorError> {
    let mut owners: BTreeMap<String, &ModuleId> = BTreeMap::new();
    for d in existing {
        if d.module_id == candidate.module_id {
            continue;
        }
        for (_, t) in d.owned_topics() {
            owners.insert(t, &d.module_id);
        }
        owners.insert(d.dead_letter_topic(), &d.module_id);
    }
    let mut mine: Vec<String> = candidate
        .owned_topics()
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    mine.push(candidate.dead_letter_topic());
    for t in &mine {
        if let Some(owner) = owners.get(t) {
            return Err(DescriptorError::TopicCollision {
                topic: t.clone(),
                module: candidate.module_id.clone(),
                owner: (*owner).clone(),
            });
        }
    }
    // A module's own dead-letter topic must not shadow one of its inputs.
    if candidate
        .owned_topics()
        .iter()
        .any(|(_, t)| *t == candidate.dead_letter_topic())
    {
        return Err(DescriptorError::TopicCollision {
            topic: candidate.dead_letter_topic(),
            module: candidate.module_id.clone(),
            owner: candidate.module_id.clone(),
        });
    }
    Ok(())
}
