//! Per-(task, node) input accumulation.
//!
//! A node with k predecessors executes once payloads from all k have
//! arrived. Entries also remember which bus messages they were built from,
//! so the host never commits past a message whose entry has not finished.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;
use uuid::Uuid;
use vpe_core::flowgraph::{FlowGraph, Payload, Producer, TaskData};
use vpe_core::processors::Inputs;
use vpe_core::NodeId;

pub type EntryKey = (Uuid, NodeId);

/// A bus message an entry depends on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MsgRef {
    pub topic: Arc<str>,
    pub offset: u64,
}

#[derive(Debug, Clone)]
pub struct AccumulatorEntry {
    pub task_id: Uuid,
    pub node_id: NodeId,
    pub arrived: Inputs,
    pub required: BTreeSet<NodeId>,
    pub graph: FlowGraph,
    pub first_arrival_time: u64,
    /// Messages folded into this entry, with their raw bytes for dead-lettering.
    pub held: BTreeMap<MsgRef, Arc<[u8]>>,
    /// Handed out as READY and not yet finished or aborted.
    pub in_flight: bool,
}

impl AccumulatorEntry {
    pub fn is_ready(&self) -> bool {
        if self.required.is_empty() {
            self.arrived.contains_key(&Producer::Source)
        } else {
            self.required
                .iter()
                .all(|p| self.arrived.contains_key(&Producer::Node(*p)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Accumulated {
    Ready(Inputs),
    Pending,
    /// The entry is executing; the message is held until it finishes.
    InFlight,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccumulateError {
    #[error("BAD_PRODUCER: {producer} is not a predecessor of node {node}")]
    BadProducer { producer: Producer, node: NodeId },
    #[error("NOT_FOUND: node {0} not in graph")]
    NotFound(NodeId),
}

impl AccumulateError {
    pub fn code(&self) -> &'static str {
        match self {
            AccumulateError::BadProducer { .. } => "BAD_PRODUCER",
            AccumulateError::NotFound(_) => "NOT_FOUND",
        }
    }
}

#[derive(Debug, Default)]
pub struct Accumulator {
    entries: HashMap<EntryKey, AccumulatorEntry>,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &EntryKey) -> Option<&AccumulatorEntry> {
        self.entries.get(key)
    }

    /// Folds `td.payload` into the entry for `(task_id, nme)`. A repeated
    /// producer overwrites its earlier payload. When every predecessor has
    /// delivered, the entry is marked in flight and its inputs returned.
    pub fn accumulate(
        &mut self,
        td: &TaskData,
        msg: Option<(MsgRef, Arc<[u8]>)>,
        now: u64,
    ) -> Result<Accumulated, AccumulateError> {
        let required = td
            .graph
            .predecessors(td.nme)
            .map_err(|_| AccumulateError::NotFound(td.nme))?;
        if let Producer::Node(p) = td.payload.producer {
            if !required.contains(&p) {
                return Err(AccumulateError::BadProducer {
                    producer: td.payload.producer,
                    node: td.nme,
                });
            }
        }
        let entry = self
            .entries
            .entry((td.task_id, td.nme))
            .or_insert_with(|| AccumulatorEntry {
                task_id: td.task_id,
                node_id: td.nme,
                arrived: BTreeMap::new(),
                required,
                graph: td.graph.clone(),
                first_arrival_time: now,
                held: BTreeMap::new(),
                in_flight: false,
            });
        if let Some((r, raw)) = msg {
            entry.held.insert(r, raw);
        }
        if entry.in_flight {
            return Ok(Accumulated::InFlight);
        }
        let payload: Payload = td.payload.clone();
        entry.arrived.insert(payload.producer, payload);
        if entry.is_ready() {
            entry.in_flight = true;
            Ok(Accumulated::Ready(entry.arrived.clone()))
        } else {
            Ok(Accumulated::Pending)
        }
    }

    /// Adds `msg` to the entry for `key` if that entry is in flight, so the
    /// message stays uncommitted until the execution finishes.
    pub fn hold_if_in_flight(&mut self, key: &EntryKey, msg: (MsgRef, Arc<[u8]>)) -> bool {
        match self.entries.get_mut(key) {
            Some(e) if e.in_flight => {
                e.held.insert(msg.0, msg.1);
                true
            }
            _ => false,
        }
    }

    /// Removes a finished entry, releasing every message it held.
    pub fn finish(&mut self, key: &EntryKey) -> Option<AccumulatorEntry> {
        self.entries.remove(key)
    }

    /// Returns an in-flight entry to pending after a failed execution. A later
    /// redelivery of any of its messages makes it ready again.
    pub fn abort(&mut self, key: &EntryKey) {
        if let Some(e) = self.entries.get_mut(key) {
            e.in_flight = false;
        }
    }

    /// Lowest held offset on `topic`, if any entry holds one.
    pub fn min_held(&self, topic: &str) -> Option<u64> {
        self.entries
            .values()
            .flat_map(|e| e.held.keys())
            .filter(|r| &*r.topic == topic)
            .map(|r| r.offset)
            .min()
    }

    /// Removes and returns entries that are not in flight and first received
    /// input before `cutoff`.
    pub fn evict_older_than(&mut self, cutoff: u64) -> Vec<AccumulatorEntry> {
        let stale: Vec<EntryKey> = self
            .entries
            .iter()
            .filter(|(_, e)| !e.in_flight && e.first_arrival_time < cutoff)
            .map(|(k, _)| *k)
            .collect();
        stale
            .iter()
            .filter_map(|k| self.entries.remove(k))
            .collect()
    }
}
