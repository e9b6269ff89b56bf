//! The consume loop of one module.
//!
//! Each owned topic gets a worker thread: poll, decode, locate the node to
//! execute, accumulate, execute when ready, persist the result, publish the
//! routed outputs, commit. A topic's commit never passes a message still held
//! by a pending or executing accumulator entry, so a crash at any point only
//! causes redelivery; the processing ledger turns redelivery into a no-op.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use thiserror::Error;
use uuid::Uuid;
use vpe_core::flowgraph::{
    decode_taskdata, encode_taskdata, FlowNode, Payload, Producer, TaskData,
};
use vpe_core::processors::{check_outputs, Inputs, Processor, ProcessorError};
use vpe_core::{now_ms, DataType, ModuleDescriptor, NodeId};
use vpe_metastore::{MetaStore, ResultRecord};
use vpe_msgbus::{Bus, BusError, BusMessage, Subscription};

use crate::accumulator::{Accumulated, Accumulator, AccumulatorEntry, EntryKey, MsgRef};
use crate::fault::{FaultAction, FaultHook, FaultPoint};
use crate::ledger::{LedgerEntry, ProcessingLedger};
use crate::routing::{route_outputs, Directory};

/// Optional batching hook between receiving and processing. It may reorder
/// or regroup a batch but must keep every message.
pub trait Reorganize: Send + Sync {
    fn reorganize(&self, batch: Vec<BusMessage>) -> Vec<BusMessage> {
        batch
    }
}

#[derive(Debug, Default)]
pub struct Identity;

impl Reorganize for Identity {}

/// Instrumentation callbacks. All default to no-ops.
pub trait Observer: Send + Sync {
    fn arrived(&self, _task_id: Uuid, _node: NodeId, _producer: Producer) {}
    fn executed(&self, _task_id: Uuid, _node: NodeId, _inputs: &Inputs) {}
    fn stalled(&self, _entry: &AccumulatorEntry) {}
    fn dead_lettered(&self, _code: &str, _detail: &str) {}
}

#[derive(Clone)]
pub struct HostOptions {
    pub state_dir: PathBuf,
    /// Pending entries older than this are evicted as stalled.
    pub ttl: Duration,
    pub batch_size: usize,
    pub poll_timeout: Duration,
    /// Failed executions of one entry before its messages are dead-lettered.
    pub max_attempts: u32,
    pub retry_backoff: Duration,
    pub fsync: bool,
    pub fault: Option<FaultPoint>,
    pub fault_action: FaultAction,
    pub observer: Option<Arc<dyn Observer>>,
    pub reorganize: Arc<dyn Reorganize>,
}

impl HostOptions {
    pub fn new(state_dir: impl Into<PathBuf>) -> Self {
        Self {
            state_dir: state_dir.into(),
            ttl: Duration::from_secs(3600),
            batch_size: 64,
            poll_timeout: Duration::from_millis(100),
            max_attempts: 5,
            retry_backoff: Duration::from_millis(200),
            fsync: false,
            fault: None,
            fault_action: FaultAction::Return,
            observer: None,
            reorganize: Arc::new(Identity),
        }
    }
}

impl std::fmt::Debug for HostOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HostOptions")
            .field("state_dir", &self.state_dir)
            .field("ttl", &self.ttl)
            .field("fault", &self.fault)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Error)]
pub enum HostError {
    #[error("BAD_DESCRIPTOR: {0}")]
    BadDescriptor(String),
    #[error("crashed at fault point {0}")]
    Crashed(FaultPoint),
    #[error("bus: {0}")]
    Bus(#[from] BusError),
    #[error("IO_FAIL: {0}")]
    Io(#[from] std::io::Error),
}

enum Step {
    Crash(FaultPoint),
    /// Abandon the batch and re-read from the last commit after a pause.
    Rewind(String),
}

impl From<BusError> for Step {
    fn from(e: BusError) -> Self {
        Step::Rewind(format!("bus: {e}"))
    }
}

struct Job {
    key: EntryKey,
    td: TaskData,
    node: FlowNode,
    inputs: Inputs,
}

struct State {
    acc: Accumulator,
    ledger: ProcessingLedger,
    /// Ledger entries whose outputs were published by this process.
    emitted: HashSet<EntryKey>,
    attempts: HashMap<EntryKey, u32>,
}

struct Shared {
    descriptor: ModuleDescriptor,
    processor: Arc<dyn Processor>,
    serial: Mutex<()>,
    bus: Arc<dyn Bus>,
    store: Arc<dyn MetaStore>,
    directory: Arc<dyn Directory>,
    opts: HostOptions,
    fault: FaultHook,
    state: Mutex<State>,
    stop: Arc<AtomicBool>,
}

/// A running module: one worker per owned topic sharing one accumulator and
/// one ledger.
#[derive(Clone)]
pub struct ModuleHost {
    shared: Arc<Shared>,
}

impl std::fmt::Debug for ModuleHost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModuleHost")
            .field("module", &self.shared.descriptor.module_id)
            .finish_non_exhaustive()
    }
}

/// One ResultRecord per execution. Processors here emit a single output;
/// several outputs are concatenated under the first output's datatype.
pub fn result_record(
    task_id: Uuid,
    node: NodeId,
    module: &str,
    outputs: &[Payload],
) -> ResultRecord {
    let datatype = outputs
        .first()
        .map(|p| p.datatype.to_string())
        .unwrap_or_else(|| "Blob".to_owned());
    ResultRecord {
        task_id,
        node_id: node,
        module_id: module.to_owned(),
        datatype,
        records: outputs
            .iter()
            .flat_map(|p| p.records.iter().cloned())
            .collect(),
        created_at: now_ms(),
    }
}

impl ModuleHost {
    pub fn new(
        descriptor: ModuleDescriptor,
        processor: Arc<dyn Processor>,
        bus: Arc<dyn Bus>,
        store: Arc<dyn MetaStore>,
        directory: Arc<dyn Directory>,
        opts: HostOptions,
    ) -> Result<Self, HostError> {
        descriptor
            .check()
            .map_err(|e| HostError::BadDescriptor(e.to_string()))?;
        let contract = processor.contract();
        if let Some(d) = descriptor
            .input_datatypes
            .iter()
            .find(|d| !contract.accepts.contains(*d))
        {
            return Err(HostError::BadDescriptor(format!(
                "processor {} does not accept {d}",
                contract.processor_id
            )));
        }
        for (_, topic) in descriptor.owned_topics() {
            bus.create_topic(&topic)?;
        }
        bus.create_topic(&descriptor.dead_letter_topic())?;
        let ledger = ProcessingLedger::open(
            opts.state_dir
                .join(descriptor.module_id.as_str())
                .join("ledger"),
            opts.fsync,
        )?;
        let fault = FaultHook::new(opts.fault, opts.fault_action);
        Ok(Self {
            shared: Arc::new(Shared {
                descriptor,
                processor,
                serial: Mutex::new(()),
                bus,
                store,
                directory,
                opts,
                fault,
                state: Mutex::new(State {
                    acc: Accumulator::new(),
                    ledger,
                    emitted: HashSet::new(),
                    attempts: HashMap::new(),
                }),
                stop: Arc::new(AtomicBool::new(false)),
            }),
        })
    }

    pub fn descriptor(&self) -> &ModuleDescriptor {
        &self.shared.descriptor
    }

    /// Setting the flag makes every worker finish its batch, commit and return.
    pub fn stop_handle(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.shared.stop)
    }

    pub fn pending_entries(&self) -> usize {
        self.shared.state.lock().expect("state lock").acc.len()
    }

    /// Runs until stopped or a fault fires. Blocks the calling thread.
    pub fn run(&self) -> Result<(), HostError> {
        let s = &self.shared;
        tracing::info!(
            module = %s.descriptor.module_id,
            processor = %s.descriptor.processor_id,
            version = s.descriptor.version.as_deref().unwrap_or("-"),
            "module starting"
        );
        let topics: Vec<Arc<str>> = s
            .descriptor
            .owned_topics()
            .into_iter()
            .map(|(_, t)| Arc::from(t.as_str()))
            .collect();
        let results: Vec<Result<(), HostError>> = thread::scope(|scope| {
            let handles: Vec<_> = topics
                .iter()
                .map(|t| {
                    let t = Arc::clone(t);
                    scope.spawn(move || {
                        let r = s.worker(&t);
                        if r.is_err() {
                            s.stop.store(true, Ordering::SeqCst);
                        }
                        r
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        tracing::info!(module = %s.descriptor.module_id, "module stopped");
        results.into_iter().collect()
    }

    /// Runs on a background thread.
    pub fn spawn(&self) -> thread::JoinHandle<Result<(), HostError>> {
        let host = self.clone();
        thread::spawn(move || host.run())
    }
}

impl Shared {
    fn stopping(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    fn pause(&self) {
        let step = Duration::from_millis(20);
        let mut left = self.opts.retry_backoff;
        while !left.is_zero() && !self.stopping() {
            let d = left.min(step);
            thread::sleep(d);
            left -= d;
        }
    }

    fn worker(&self, topic: &Arc<str>) -> Result<(), HostError> {
        let group = self.descriptor.module_id.as_str();
        let mut sub: Option<Subscription> = None;
        let mut position = 0u64;
        let mut committed = 0u64;
        loop {
            let s = match &sub {
                Some(s) => s.clone(),
                None => {
                    if self.stopping() {
                        return Ok(());
                    }
                    match self.bus.subscribe(topic, group) {
                        Ok(s) => {
                            position = s.position;
                            committed = s.position;
                            sub = Some(s.clone());
                            s
                        }
                        Err(e) => {
                            tracing::warn!(topic = %topic, error = %e, "subscribe failed");
                            self.pause();
                            continue;
                        }
                    }
                }
            };
            if self.stopping() {
                self.commit(topic, &s, position, &mut committed);
                let _ = self.bus.close(s.consumer);
                return Ok(());
            }
            let batch =
                match self
                    .bus
                    .poll(s.consumer, self.opts.batch_size, self.opts.poll_timeout)
                {
                    Ok(b) => b,
                    Err(e) => {
                        tracing::warn!(topic = %topic, error = %e, "poll failed");
                        sub = None;
                        self.pause();
                        continue;
                    }
                };
            self.evict_stale();
            if let Some(last) = batch.last() {
                let next = last.offset + 1;
                match self.process_batch(topic, batch) {
                    Ok(()) => position = next,
                    Err(Step::Crash(p)) => return Err(HostError::Crashed(p)),
                    Err(Step::Rewind(why)) => {
                        tracing::warn!(topic = %topic, reason = %why, "rewinding to last commit");
                        let _ = self.bus.close(s.consumer);
                        sub = None;
                        self.pause();
                        continue;
                    }
                }
            }
            if !self.commit(topic, &s, position, &mut committed) {
                sub = None;
            }
        }
    }

    /// Commits up to the lowest message still held on `topic`. Returns false
    /// if the consumer must be re-opened.
    fn commit(&self, topic: &str, s: &Subscription, position: u64, committed: &mut u64) -> bool {
        let held = self.state.lock().expect("state lock").acc.min_held(topic);
        let mark = held.map_or(position, |h| h.min(position));
        if mark <= *committed {
            return true;
        }
        match self.bus.commit(s.consumer, mark) {
            Ok(()) => {
                *committed = mark;
                true
            }
            Err(e) => {
                tracing::warn!(topic = %topic, error = %e, "commit failed");
                false
            }
        }
    }

    fn process_batch(&self, topic: &Arc<str>, batch: Vec<BusMessage>) -> Result<(), Step> {
        if self.fault.reached(FaultPoint::AfterPoll) {
            return Err(Step::Crash(FaultPoint::AfterPoll));
        }
        let batch = self.opts.reorganize.reorganize(batch);
        let mut jobs = Vec::new();
        for msg in batch {
            if let Some(job) = self.admit(topic, msg)? {
                jobs.push(job);
            }
        }
        if jobs.is_empty() {
            return Ok(());
        }
        let executed = self.execute_all(jobs)?;
        if executed > 0 && self.fault.reached(FaultPoint::AfterPublish) {
            return Err(Step::Crash(FaultPoint::AfterPublish));
        }
        Ok(())
    }

    fn dead_letter(&self, key: Uuid, raw: &[u8], code: &str, detail: &str) -> Result<(), Step> {
        tracing::warn!(module = %self.descriptor.module_id, code, detail, "dead-lettering message");
        self.bus
            .publish(&self.descriptor.dead_letter_topic(), key, raw)?;
        if let Some(o) = &self.opts.observer {
            o.dead_lettered(code, detail);
        }
        Ok(())
    }

    fn dead_letter_entry(
        &self,
        entry: &AccumulatorEntry,
        code: &str,
        detail: &str,
    ) -> Result<(), Step> {
        for raw in entry.held.values() {
            self.dead_letter(entry.task_id, raw, code, detail)?;
        }
        Ok(())
    }

    fn evict_stale(&self) {
        let cutoff = now_ms().saturating_sub(self.opts.ttl.as_millis() as u64);
        let stale = self
            .state
            .lock()
            .expect("state lock")
            .acc
            .evict_older_than(cutoff);
        for e in stale {
            tracing::warn!(task = %e.task_id, node = e.node_id, arrived = e.arrived.len(), "STALLED: evicting pending entry");
            if let Some(o) = &self.opts.observer {
                o.stalled(&e);
            }
            if let Err(Step::Rewind(why)) =
                self.dead_letter_entry(&e, "STALLED", "pending past ttl")
            {
                tracing::error!(task = %e.task_id, reason = %why, "stalled entry could not be dead-lettered");
            }
        }
    }

    /// Decodes and accumulates one message. Returns a job when it completes
    /// an entry.
    fn admit(&self, topic: &Arc<str>, msg: BusMessage) -> Result<Option<Job>, Step> {
        let raw: Arc<[u8]> = Arc::from(msg.value);
        let td = match decode_taskdata(&raw) {
            Ok(td) => td,
            Err(e) => {
                self.dead_letter(msg.key, &raw, e.code(), &e.to_string())?;
                return Ok(None);
            }
        };
        let node = match td.locate_self(&self.descriptor.module_id) {
            Ok(n) => n.clone(),
            Err(e) => {
                self.dead_letter(td.task_id, &raw, e.code(), &e.to_string())?;
                return Ok(None);
            }
        };
        if let Some(o) = &self.opts.observer {
            o.arrived(td.task_id, td.nme, td.payload.producer);
        }
        let key = (td.task_id, td.nme);
        let held = (
            MsgRef {
                topic: Arc::clone(topic),
                offset: msg.offset,
            },
            raw,
        );
        let mut state = self.state.lock().expect("state lock");
        if let Some(entry) = state.ledger.get(&key).cloned() {
            if state.acc.hold_if_in_flight(&key, held) {
                return Ok(None);
            }
            if !state.emitted.contains(&key) {
                drop(state);
                self.re_emit(&td, &entry)?;
                state = self.state.lock().expect("state lock");
                state.emitted.insert(key);
            }
            state.acc.finish(&key);
            return Ok(None);
        }
        let raw = Arc::clone(&held.1);
        match state.acc.accumulate(&td, Some(held), now_ms()) {
            Ok(Accumulated::Ready(inputs)) => Ok(Some(Job {
                key,
                td,
                node,
                inputs,
            })),
            Ok(Accumulated::Pending | Accumulated::InFlight) => Ok(None),
            Err(e) => {
                drop(state);
                self.dead_letter(td.task_id, &raw, e.code(), &e.to_string())?;
                Ok(None)
            }
        }
    }

    /// Finishes an execution recorded by an earlier process: persist its
    /// result and publish its outputs again.
    fn re_emit(&self, td: &TaskData, entry: &LedgerEntry) -> Result<(), Step> {
        tracing::debug!(task = %td.task_id, node = td.nme, "ledger hit, re-emitting stored outputs");
        self.store
            .save_result(&entry.result)
            .map_err(|e| Step::Rewind(format!("store: {e}")))?;
        let payloads = entry
            .payloads()
            .map_err(|e| Step::Rewind(format!("ledger entry unreadable: {e}")))?;
        match route_outputs(td, td.nme, &payloads, &*self.directory) {
            Ok(routes) => self.publish_routes(&routes),
            Err(e) if e.is_transient() => Err(Step::Rewind(e.to_string())),
            Err(e) => {
                tracing::error!(task = %td.task_id, node = td.nme, error = %e, "stored outputs cannot be routed");
                Ok(())
            }
        }
    }

    fn publish_routes(&self, routes: &[(String, TaskData)]) -> Result<(), Step> {
        for (topic, out) in routes {
            let bytes = encode_taskdata(out).map_err(|e| Step::Rewind(format!("encode: {e}")))?;
            self.bus.publish(topic, out.task_id, &bytes)?;
        }
        Ok(())
    }

    /// Executes ready jobs on up to `instance_count` threads. Returns how
    /// many completed.
    fn execute_all(&self, jobs: Vec<Job>) -> Result<usize, Step> {
        let workers = (self.descriptor.instance_count as usize).clamp(1, jobs.len());
        if workers == 1 {
            let mut done = 0;
            let mut rewind = None;
            for job in jobs {
                match self.execute(job) {
                    Ok(true) => done += 1,
                    Ok(false) => {}
                    Err(Step::Crash(p)) => return Err(Step::Crash(p)),
                    Err(Step::Rewind(why)) => rewind = Some(why),
                }
            }
            return match rewind {
                Some(why) => Err(Step::Rewind(why)),
                None => Ok(done),
            };
        }
        let queue = Mutex::new(jobs);
        let outcomes: Vec<Result<usize, Step>> = thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    scope.spawn(|| {
                        let mut done = 0;
                        let mut rewind = None;
                        loop {
                            let Some(job) = queue.lock().expect("queue lock").pop() else {
                                break;
                            };
                            match self.execute(job) {
                                Ok(true) => done += 1,
                                Ok(false) => {}
                                Err(Step::Crash(p)) => return Err(Step::Crash(p)),
                                Err(Step::Rewind(why)) => rewind = Some(why),
                            }
                        }
                        match rewind {
                            Some(why) => Err(Step::Rewind(why)),
                            None => Ok(done),
                        }
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("executor panicked"))
                .collect()
        });
        let mut done = 0;
        let mut rewind = None;
        for o in outcomes {
            match o {
                Ok(n) => done += n,
                Err(Step::Crash(p)) => return Err(Step::Crash(p)),
                Err(Step::Rewind(why)) => rewind = Some(why),
            }
        }
        match rewind {
            Some(why) => Err(Step::Rewind(why)),
            None => Ok(done),
        }
    }

    fn run_processor(&self, job: &Job) -> Result<Vec<Payload>, ProcessorError> {
        let contract = self.processor.contract();
        let outputs = if contract.single_threaded {
            let _guard = self.serial.lock().expect("serial lock");
            self.processor.process(&job.node, &job.inputs)?
        } else {
            self.processor.process(&job.node, &job.inputs)?
        };
        check_outputs(contract, &outputs)?;
        Ok(outputs
            .into_iter()
            .map(|o| Payload::new(o.datatype, o.records, Producer::Node(job.node.id)))
            .collect())
    }

    /// Gives up on an entry: its messages go to the dead-letter topic and
    /// its offsets are released.
    fn abandon(&self, key: &EntryKey, code: &str, detail: &str) -> Result<(), Step> {
        let entry = {
            let mut state = self.state.lock().expect("state lock");
            state.attempts.remove(key);
            state.acc.finish(key)
        };
        if let Some(e) = entry {
            self.dead_letter_entry(&e, code, detail)?;
        }
        Ok(())
    }

    fn fail(&self, key: &EntryKey, why: String) -> Step {
        self.state.lock().expect("state lock").acc.abort(key);
        Step::Rewind(why)
    }

    /// Returns whether the job ran to completion.
    fn execute(&self, job: Job) -> Result<bool, Step> {
        let key = job.key;
        if let Some(o) = &self.opts.observer {
            o.executed(key.0, key.1, &job.inputs);
        }
        let outputs = match self.run_processor(&job) {
            Ok(o) => o,
            Err(e) => {
                let attempts = {
                    let mut state = self.state.lock().expect("state lock");
                    let n = state.attempts.entry(key).or_insert(0);
                    *n += 1;
                    *n
                };
                tracing::warn!(task = %key.0, node = key.1, attempt = attempts, error = %e, "EXEC_FAIL");
                if attempts >= self.opts.max_attempts {
                    self.abandon(&key, "EXEC_FAIL", &e.to_string())?;
                    return Ok(false);
                }
                return Err(self.fail(&key, format!("EXEC_FAIL: {e}")));
            }
        };
        let routes = match route_outputs(&job.td, key.1, &outputs, &*self.directory) {
            Ok(r) => r,
            Err(e) if e.is_transient() => return Err(self.fail(&key, e.to_string())),
            Err(e) => {
                self.abandon(&key, e.code(), &e.to_string())?;
                return Ok(false);
            }
        };
        let result = result_record(key.0, key.1, self.descriptor.module_id.as_str(), &outputs);
        {
            let mut state = self.state.lock().expect("state lock");
            if let Err(e) = state
                .ledger
                .record(LedgerEntry::new(result.clone(), &outputs))
            {
                state.acc.abort(&key);
                return Err(Step::Rewind(format!("ledger: {e}")));
            }
            state.attempts.remove(&key);
        }
        if self.fault.reached(FaultPoint::AfterExecute) {
            return Err(Step::Crash(FaultPoint::AfterExecute));
        }
        if let Err(e) = self.store.save_result(&result) {
            return Err(self.fail(&key, format!("store: {e}")));
        }
        if let Err(step) = self.publish_routes(&routes) {
            self.state.lock().expect("state lock").acc.abort(&key);
            return Err(step);
        }
        let mut state = self.state.lock().expect("state lock");
        state.acc.finish(&key);
        state.emitted.insert(key);
        tracing::debug!(task = %key.0, node = key.1, routed = routes.len(), "executed");
        Ok(true)
    }
}

/// Convenience for tests and tools: the TaskData a gateway would inject for
/// a source node.
pub fn source_taskdata(
    task_id: Uuid,
    graph: vpe_core::FlowGraph,
    node: NodeId,
    datatype: DataType,
    records: Vec<Vec<u8>>,
) -> TaskData {
    TaskData {
        task_id,
        nme: node,
        graph,
        payload: Payload::new(datatype, records, Producer::Source),
    }
}
