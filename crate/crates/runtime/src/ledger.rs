//! Durable record of executed (task, node) pairs.
//!
//! Each entry also keeps the result and the outputs of the execution, so a
//! module that crashed after executing but before publishing can finish the
//! job on restart without running the processor again.

use std::collections::HashMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use uuid::Uuid;
use vpe_core::flowgraph::{decode_records, encode_records, Payload, Producer};
use vpe_core::recordlog::RecordLog;
use vpe_core::{DataType, NodeId};
use vpe_metastore::ResultRecord;

use crate::accumulator::EntryKey;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredOutput {
    pub datatype: String,
    pub records: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub task_id: Uuid,
    pub node_id: NodeId,
    pub result: ResultRecord,
    pub outputs: Vec<StoredOutput>,
}

impl LedgerEntry {
    pub fn new(result: ResultRecord, outputs: &[Payload]) -> Self {
        Self {
            task_id: result.task_id,
            node_id: result.node_id,
            outputs: outputs
                .iter()
                .map(|p| StoredOutput {
                    datatype: p.datatype.to_string(),
                    records: encode_records(&p.records),
                })
                .collect(),
            result,
        }
    }

    /// The stored outputs as payloads produced by this entry's node.
    pub fn payloads(&self) -> io::Result<Vec<Payload>> {
        let bad = |e: String| io::Error::new(io::ErrorKind::InvalidData, e);
        self.outputs
            .iter()
            .map(|o| {
                let datatype =
                    DataType::new(o.datatype.as_str()).map_err(|e| bad(e.to_string()))?;
                let records = decode_records(&o.records).map_err(|e| bad(format!("{e:?}")))?;
                Ok(Payload::new(
                    datatype,
                    records,
                    Producer::Node(self.node_id),
                ))
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct ProcessingLedger {
    log: RecordLog,
    entries: HashMap<EntryKey, LedgerEntry>,
}

impl ProcessingLedger {
    pub fn open(path: impl AsRef<Path>, fsync: bool) -> io::Result<Self> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let (log, records) = RecordLog::open(path, fsync)?;
        let mut entries = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let e: LedgerEntry = serde_json::from_slice(rec).map_err(|err| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{} entry {i}: {err}", path.display()),
                )
            })?;
            entries.entry((e.task_id, e.node_id)).or_insert(e);
        }
        Ok(Self { log, entries })
    }

    pub fn contains(&self, key: &EntryKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &EntryKey) -> Option<&LedgerEntry> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends `entry` unless its key is already present. Returns whether it
    /// was appended.
    pub fn record(&mut self, entry: LedgerEntry) -> io::Result<bool> {
        let key = (entry.task_id, entry.node_id);
        if self.entries.contains_key(&key) {
            return Ok(false);
        }
        let bytes = serde_json::to_vec(&entry).expect("ledger entry serializes");
        self.log.append(&bytes)?;
        self.entries.insert(key, entry);
        Ok(true)
    }
}
