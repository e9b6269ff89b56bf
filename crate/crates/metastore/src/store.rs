use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use uuid::Uuid;
use vpe_core::recordlog::RecordLog;
use vpe_core::NodeId;

use crate::{
    FeedbackFilter, FeedbackKind, FeedbackRecord, MetaStore, ResultRecord, SaveOutcome, StoreError,
    TaskRecord,
};

#[derive(Debug, Clone, Default)]
pub struct StoreOptions {
    pub fsync: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "entry", content = "record", rename_all = "snake_case")]
enum Entry {
    Result(ResultRecord),
    Feedback(FeedbackRecord),
    Task(TaskRecord),
}

#[derive(Default)]
struct Index {
    results: BTreeMap<(Uuid, NodeId), ResultRecord>,
    feedback: Vec<FeedbackRecord>,
    feedback_ids: HashSet<Uuid>,
    tasks: HashMap<Uuid, TaskRecord>,
}

impl Index {
    fn apply(&mut self, entry: Entry) {
        match entry {
            Entry::Result(r) => {
                self.results.entry((r.task_id, r.node_id)).or_insert(r);
            }
            Entry::Feedback(f) => {
                if self.feedback_ids.insert(f.feedback_id) {
                    self.feedback.push(f);
                }
            }
            Entry::Task(t) => {
                self.tasks.entry(t.task_id).or_insert(t);
            }
        }
    }
}

struct Inner {
    log: RecordLog,
    index: Index,
}

pub struct Store {
    dir: PathBuf,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("dir", &self.dir)
            .finish_non_exhaustive()
    }
}

impl Store {
    pub fn open(dir: impl AsRef<Path>, options: StoreOptions) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("store.log");
        let (log, records) = RecordLog::open(&path, options.fsync)?;
        let mut index = Index::default();
        for (i, rec) in records.iter().enumerate() {
            let entry: Entry = serde_json::from_slice(rec).map_err(|e| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{} entry {i}: {e}", path.display()),
                )
            })?;
            index.apply(entry);
        }
        tracing::debug!(
            results = index.results.len(),
            feedback = index.feedback.len(),
            tasks = index.tasks.len(),
            "store recovered"
        );
        Ok(Self {
            dir,
            inner: Mutex::new(Inner { log, index }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn append(inner: &mut Inner, entry: Entry) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec(&entry).expect("store entries serialize");
        inner.log.append(&bytes)?;
        inner.index.apply(entry);
        Ok(())
    }
}

impl MetaStore for Store {
    fn save_result(&self, record: &ResultRecord) -> Result<SaveOutcome, StoreError> {
        let mut inner = self.inner.lock().expect("store lock");
        if inner
            .index
            .results
            .contains_key(&(record.task_id, record.node_id))
        {
            return Ok(SaveOutcome::Duplicate);
        }
        Self::append(&mut inner, Entry::Result(record.clone()))?;
        Ok(SaveOutcome::Stored)
    }

    fn query_results(
        &self,
        task_id: Uuid,
        node_id: Option<NodeId>,
    ) -> Result<Vec<ResultRecord>, StoreError> {
        let inner = self.inner.lock().expect("store lock");
        let out = match node_id {
            Some(n) => inner
                .index
                .results
                .get(&(task_id, n))
                .cloned()
                .into_iter()
                .collect(),
            None => inner
                .index
                .results
                .range((task_id, NodeId::MIN)..=(task_id, NodeId::MAX))
                .map(|(_, r)| r.clone())
                .collect(),
        };
        Ok(out)
    }

    fn save_feedback(&self, record: &FeedbackRecord) -> Result<SaveOutcome, StoreError> {
        record.check_shape()?;
        let mut inner = self.inner.lock().expect("store lock");
        let result = inner
            .index
            .results
            .get(&(record.task_id, record.node_id))
            .ok_or(StoreError::NoResult {
                task_id: record.task_id,
                node_id: record.node_id,
            })?;
        if let Some(indices) = &record.selected_record_indices {
            let len = result.records.len();
            if let Some(&index) = indices.iter().find(|&&i| i >= len) {
                return Err(StoreError::BadIndex { index, len });
            }
        }
        if inner.index.feedback_ids.contains(&record.feedback_id) {
            return Ok(SaveOutcome::Duplicate);
        }
        Self::append(&mut inner, Entry::Feedback(record.clone()))?;
        Ok(SaveOutcome::Stored)
    }

    fn export_feedback(&self, filter: &FeedbackFilter) -> Result<Vec<FeedbackRecord>, StoreError> {
        let inner = self.inner.lock().expect("store lock");
        let index = &inner.index;
        let mut out: Vec<FeedbackRecord> = index
            .feedback
            .iter()
            .filter(|f| {
                matches_filter(f, filter, |t, n| {
                    index.results.get(&(t, n)).map(|r| r.module_id.as_str())
                })
            })
            .cloned()
            .collect();
        out.sort_by_key(|f| f.created_at);
        Ok(out)
    }

    fn save_task(&self, record: &TaskRecord) -> Result<SaveOutcome, StoreError> {
        let mut inner = self.inner.lock().expect("store lock");
        if inner.index.tasks.contains_key(&record.task_id) {
            return Ok(SaveOutcome::Duplicate);
        }
        Self::append(&mut inner, Entry::Task(record.clone()))?;
        Ok(SaveOutcome::Stored)
    }

    fn get_task(&self, task_id: Uuid) -> Result<Option<TaskRecord>, StoreError> {
        Ok(self
            .inner
            .lock()
            .expect("store lock")
            .index
            .tasks
            .get(&task_id)
            .cloned())
    }
}

/// Whether `f` passes `filter`; the module of a feedback record is the
/// module that produced the result it references.
pub(crate) fn matches_filter<'a>(
    f: &FeedbackRecord,
    filter: &FeedbackFilter,
    module_of: impl Fn(Uuid, NodeId) -> Option<&'a str>,
) -> bool {
    if filter.kind.is_some_and(|k: FeedbackKind| k != f.kind) {
        return false;
    }
    if filter.since.is_some_and(|s| f.created_at < s) {
        return false;
    }
    match &filter.module_id {
        Some(m) => module_of(f.task_id, f.node_id) == Some(m.as_str()),
        None => true,
    }
}
