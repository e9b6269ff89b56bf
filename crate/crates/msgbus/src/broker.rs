use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use uuid::Uuid;
use vpe_core::recordlog::{write_atomic, RecordLog};
use vpe_core::token::is_token;

use crate::{Bus, BusError, BusMessage, ConsumerId, Subscription, TopicInfo};

const KEY_LEN: usize = 16;
const TIME_LEN: usize = 8;

pub fn encode_log_record(key: Uuid, enqueue_time: u64, value: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(KEY_LEN + TIME_LEN + value.len());
    buf.extend_from_slice(key.as_bytes());
    buf.extend_from_slice(&enqueue_time.to_be_bytes());
    buf.extend_from_slice(value);
    buf
}

/// Splits a stored record into key, enqueue time and value.
pub fn decode_log_record(record: &[u8]) -> Option<(Uuid, u64, &[u8])> {
    if record.len() < KEY_LEN + TIME_LEN {
        return None;
    }
    let key = Uuid::from_bytes(record[..KEY_LEN].try_into().ok()?);
    let time = u64::from_be_bytes(record[KEY_LEN..KEY_LEN + TIME_LEN].try_into().ok()?);
    Some((key, time, &record[KEY_LEN + TIME_LEN..]))
}

#[derive(Debug, Clone, Default)]
pub struct BrokerOptions {
    /// fsync every append and commit. Without it, data survives a process
    /// kill but not necessarily a power loss.
    pub fsync: bool,
}

struct TopicLog {
    file: RecordLog,
    messages: Vec<BusMessage>,
}

struct Topic {
    log: Mutex<TopicLog>,
    appended: Condvar,
}

struct ConsumerState {
    topic_name: String,
    topic: Arc<Topic>,
    group: String,
    position: u64,
}

pub struct Broker {
    root: PathBuf,
    options: BrokerOptions,
    topics: RwLock<HashMap<String, Arc<Topic>>>,
    committed: Mutex<HashMap<(String, String), u64>>,
    consumers: Mutex<HashMap<ConsumerId, ConsumerState>>,
    next_consumer: AtomicU64,
}

impl std::fmt::Debug for Broker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Broker")
            .field("root", &self.root)
            .finish_non_exhaustive()
    }
}

impl Broker {
    /// Opens the broker rooted at `root`, recovering every topic log found there.
    pub fn open(root: impl AsRef<Path>, options: BrokerOptions) -> Result<Self, BusError> {
        let root = root.as_ref().to_path_buf();
        let topics_dir = root.join("topics");
        fs::create_dir_all(&topics_dir)?;
        fs::create_dir_all(root.join("groups"))?;
        let mut topics = HashMap::new();
        for entry in fs::read_dir(&topics_dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !is_token(&name) || !entry.file_type()?.is_dir() {
                continue;
            }
            let topic = Self::load_topic(&entry.path().join("log"), options.fsync)?;
            tracing::debug!(topic = %name, len = topic.log.lock().expect("topic lock").messages.len(), "recovered");
            topics.insert(name, Arc::new(topic));
        }
        Ok(Self {
            root,
            options,
            topics: RwLock::new(topics),
            committed: Mutex::new(HashMap::new()),
            consumers: Mutex::new(HashMap::new()),
            next_consumer: AtomicU64::new(1),
        })
    }

    fn load_topic(path: &Path, fsync: bool) -> Result<Topic, BusError> {
        let (file, records) = RecordLog::open(path, fsync)?;
        let mut messages = Vec::with_capacity(records.len());
        for (offset, rec) in records.iter().enumerate() {
            let (key, enqueue_time, value) = decode_log_record(rec).ok_or_else(|| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!(
                        "{}: record {offset} shorter than its header",
                        path.display()
                    ),
                )
            })?;
            messages.push(BusMessage {
                offset: offset as u64,
                key,
                value: value.to_vec(),
                enqueue_time,
            });
        }
        Ok(Topic {
            log: Mutex::new(TopicLog { file, messages }),
            appended: Condvar::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn topic(&self, name: &str) -> Result<Arc<Topic>, BusError> {
        self.topics
            .read()
            .expect("topics lock")
            .get(name)
            .cloned()
            .ok_or_else(|| BusError::NoTopic(name.to_owned()))
    }

    fn offset_path(&self, group: &str, topic: &str) -> PathBuf {
        self.root
            .join("groups")
            .join(group)
            .join(format!("{topic}.offset"))
    }

    fn committed_offset(&self, group: &str, topic: &str) -> Result<u64, BusError> {
        let key = (group.to_owned(), topic.to_owned());
        if let Some(v) = self.committed.lock().expect("commit lock").get(&key) {
            return Ok(*v);
        }
        let path = self.offset_path(group, topic);
        let value = match fs::read_to_string(&path) {
            Ok(s) => s.trim().parse::<u64>().map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}: {e}", path.display()),
                )
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
            Err(e) => return Err(e.into()),
        };
        self.committed
            .lock()
            .expect("commit lock")
            .entry(key)
            .or_insert(value);
        Ok(value)
    }

    /// Names and lengths of every topic, sorted by name.
    pub fn topics(&self) -> Vec<TopicInfo> {
        let topics = self.topics.read().expect("topics lock");
        let mut out: Vec<TopicInfo> = topics
            .iter()
            .map(|(name, t)| TopicInfo {
                name: name.clone(),
                length: t.log.lock().expect("topic lock").messages.len() as u64,
            })
            .collect();
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }
}

impl Bus for Broker {
    fn create_topic(&self, name: &str) -> Result<TopicInfo, BusError> {
        if !is_token(name) {
            return Err(BusError::BadName(name.to_owned()));
        }
        if let Ok(t) = self.topic(name) {
            let length = t.log.lock().expect("topic lock").messages.len() as u64;
            return Ok(TopicInfo {
                name: name.to_owned(),
                length,
            });
        }
        let mut topics = self.topics.write().expect("topics lock");
        let topic = match topics.get(name) {
            Some(t) => Arc::clone(t),
            None => {
                let t = Arc::new(Self::load_topic(
                    &self.root.join("topics").join(name).join("log"),
                    self.options.fsync,
                )?);
                topics.insert(name.to_owned(), Arc::clone(&t));
                t
            }
        };
        let length = topic.log.lock().expect("topic lock").messages.len() as u64;
        Ok(TopicInfo {
            name: name.to_owned(),
            length,
        })
    }

    fn publish(&self, topic: &str, key: Uuid, value: &[u8]) -> Result<u64, BusError> {
        let t = self.topic(topic)?;
        let mut log = t.log.lock().expect("topic lock");
        let offset = log.messages.len() as u64;
        let enqueue_time = vpe_core::now_ms();
        log.file
            .append(&encode_log_record(key, enqueue_time, value))?;
        log.messages.push(BusMessage {
            offset,
            key,
            value: value.to_vec(),
            enqueue_time,
        });
        drop(log);
        t.appended.notify_all();
        Ok(offset)
    }

    fn subscribe(&self, topic: &str, group: &str) -> Result<Subscription, BusError> {
        if !is_token(group) {
            return Err(BusError::BadName(group.to_owned()));
        }
        let t = self.topic(topic)?;
        let position = self.committed_offset(group, topic)?;
        let id = self.next_consumer.fetch_add(1, Ordering::Relaxed);
        self.consumers.lock().expect("consumers lock").insert(
            id,
            ConsumerState {
                topic_name: topic.to_owned(),
                topic: t,
                group: group.to_owned(),
                position,
            },
        );
        Ok(Subscription {
            consumer: id,
            topic: topic.to_owned(),
            group: group.to_owned(),
            position,
        })
    }

    fn poll(
        &self,
        consumer: ConsumerId,
        max: usize,
        timeout: Duration,
    ) -> Result<Vec<BusMessage>, BusError> {
        if max == 0 {
            return Err(BusError::BadRequest("max_messages must be positive".into()));
        }
        let (topic, position) = {
            let consumers = self.consumers.lock().expect("consumers lock");
            let c = consumers.get(&consumer).ok_or(BusError::Closed(consumer))?;
            (Arc::clone(&c.topic), c.position)
        };
        let deadline = Instant::now() + timeout;
        let mut log = topic.log.lock().expect("topic lock");
        while log.messages.len() as u64 <= position {
            let now = Instant::now();
            if now >= deadline {
                return Ok(Vec::new());
            }
            log = topic
                .appended
                .wait_timeout(log, deadline - now)
                .expect("topic lock")
                .0;
        }
        let start = position as usize;
        let end = (start + max).min(log.messages.len());
        let batch = log.messages[start..end].to_vec();
        drop(log);
        let mut consumers = self.consumers.lock().expect("consumers lock");
        let c = consumers
            .get_mut(&consumer)
            .ok_or(BusError::Closed(consumer))?;
        c.position = end as u64;
        Ok(batch)
    }

    fn commit(&self, consumer: ConsumerId, next_offset: u64) -> Result<(), BusError> {
        let (topic_name, topic, group) = {
            let consumers = self.consumers.lock().expect("consumers lock");
            let c = consumers.get(&consumer).ok_or(BusError::Closed(consumer))?;
            (c.topic_name.clone(), Arc::clone(&c.topic), c.group.clone())
        };
        let len = topic.log.lock().expect("topic lock").messages.len() as u64;
        if next_offset > len {
            return Err(BusError::BadOffset {
                offset: next_offset,
                len,
            });
        }
        let mut committed = self.committed.lock().expect("commit lock");
        write_atomic(
            &self.offset_path(&group, &topic_name),
            format!("{next_offset}\n").as_bytes(),
            self.options.fsync,
        )?;
        committed.insert((group, topic_name), next_offset);
        Ok(())
    }

    fn close(&self, consumer: ConsumerId) -> Result<(), BusError> {
        self.consumers
            .lock()
            .expect("consumers lock")
            .remove(&consumer)
            .map(|_| ())
            .ok_or(BusError::Closed(consumer))
    }

    fn topic_len(&self, topic: &str) -> Result<u64, BusError> {
        let t = self.topic(topic)?;
        let len = t.log.lock().expect("topic lock").messages.len() as u64;
        Ok(len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn open(dir: &Path) -> Broker {
        Broker::open(dir, BrokerOptions::default()).unwrap()
    }

    const T: Duration = Duration::from_millis(10);

    #[test]
    fn create_topic_idempotent_and_named() {
        let dir = tempfile::tempdir().unwrap();
        let b = open(dir.path());
        let t = b.create_topic("M1-Pedestrian-Attribute").unwrap();
        assert_eq!(t.length, 0);
        b.publish("M1-Pedestrian-Attribute", Uuid::new_v4(), b"x")
            .unwrap();
        assert_eq!(b.create_topic("M1-Pedestrian-Attribute").unwrap().length, 1);
        assert_eq!(b.create_topic("").unwrap_err().code(), "BAD_NAME");
        assert_eq!(b.create_topic("a/b").unwrap_err().code(), "BAD_NAME");
    }

    #[test]
    fn offsets_are_dense() {
        let dir = tempfile::tempdir().unwrap();
        let b = open(dir.path());
        b.create_topic("t").unwrap();
        for i in 0..5 {
            assert_eq!(b.publish("t", Uuid::new_v4(), &[i]).unwrap(), i as u64);
        }
        assert_eq!(
            b.publish("nope", Uuid::new_v4(), b"").unwrap_err().code(),
            "NO_TOPIC"
        );
    }

    #[test]
    fn poll_batches_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let b = open(dir.path());
        b.create_topic("t").unwrap();
        let sub = b.subscribe("t", "g").unwrap();
        assert!(b.poll(sub.consumer, 5, T).unwrap().is_empty());
        for i in 0..3u8 {
            b.publish("t", Uuid::new_v4(), &[i]).unwrap();
        }
        let first = b.poll(sub.consumer, 2, T).unwrap();
        assert_eq!(
            first.iter().map(|m| m.offset).collect::<Vec<_>>(),
            vec![0, 1]
        );
        let second = b.poll(sub.consumer, 2, T).unwrap();
        assert_eq!(second.iter().map(|m| m.offset).collect::<Vec<_>>(), vec![2]);
        assert_eq!(
            b.poll(sub.consumer, 0, T).unwrap_err().code(),
            "BAD_REQUEST"
        );
    }

    #[test]
    fn commit_and_resubscribe() {
        let dir = tempfile::tempdir().unwrap();
        let b = open(dir.path());
        b.create_topic("t").unwrap();
        for _ in 0..5 {
            b.publish("t", Uuid::new_v4(), b"m").unwrap();
        }
        let sub = b.subscribe("t", "g").unwrap();
        assert_eq!(sub.position, 0);
        b.poll(sub.consumer, 10, T).unwrap();
        b.commit(sub.consumer, 3).unwrap();
        assert_eq!(b.commit(sub.consumer, 6).unwrap_err().code(), "BAD_OFFSET");
        b.close(sub.consumer).unwrap();
        assert_eq!(b.poll(sub.consumer, 1, T).unwrap_err().code(), "CLOSED");

        drop(b);
        let b = open(dir.path());
        let sub = b.subscribe("t", "g").unwrap();
        assert_eq!(sub.position, 3);
        assert_eq!(b.poll(sub.consumer, 10, T).unwrap()[0].offset, 3);
    }

    #[test]
    fn commit_zero_on_empty_topic() {
        let dir = tempfile::tempdir().unwrap();
        let b = open(dir.path());
        b.create_topic("t").unwrap();
        let sub = b.subscribe("t", "g").unwrap();
        b.commit(sub.consumer, 0).unwrap();
    }

    #[test]
    fn uncommitted_polls_are_redelivered() {
        let dir = tempfile::tempdir().unwrap();
        let b = open(dir.path());
        b.create_topic("t").unwrap();
        for _ in 0..4 {
            b.publish("t", Uuid::new_v4(), b"m").unwrap();
        }
        let sub = b.subscribe("t", "g").unwrap();
        assert_eq!(b.poll(sub.consumer, 10, T).unwrap().len(), 4);
        // consumer goes away without committing
        b.close(sub.consumer).unwrap();
        let again = b.subscribe("t", "g").unwrap();
        assert_eq!(b.poll(again.consumer, 10, T).unwrap().len(), 4);
    }

    #[test]
    fn groups_are_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let b = open(dir.path());
        b.create_topic("t").unwrap();
        for _ in 0..3 {
            b.publish("t", Uuid::new_v4(), b"m").unwrap();
        }
        let a = b.subscribe("t", "ga").unwrap();
        let c = b.subscribe("t", "gb").unwrap();
        assert_eq!(b.poll(a.consumer, 10, T).unwrap().len(), 3);
        b.commit(a.consumer, 3).unwrap();
        assert_eq!(b.poll(c.consumer, 10, T).unwrap().len(), 3);
        assert_eq!(b.subscribe("t", "gb").unwrap().position, 0);
    }

    #[test]
    fn poll_wakes_on_publish() {
        let dir = tempfile::tempdir().unwrap();
        let b = Arc::new(open(dir.path()));
        b.create_topic("t").unwrap();
        let sub = b.subscribe("t", "g").unwrap();
        let b2 = Arc::clone(&b);
        let h = thread::spawn(move || b2.poll(sub.consumer, 1, Duration::from_secs(5)).unwrap());
        thread::sleep(Duration::from_millis(50));
        b.publish("t", Uuid::new_v4(), b"late").unwrap();
        let got = h.join().unwrap();
        assert_eq!(got[0].value, b"late");
    }

    #[test]
    fn record_layout() {
        let key = Uuid::from_u128(0x0102);
        let rec = encode_log_record(key, 0x0a0b, b"v");
        assert_eq!(rec.len(), 16 + 8 + 1);
        assert_eq!(&rec[16..24], &[0, 0, 0, 0, 0, 0, 0x0a, 0x0b]);
        assert_eq!(decode_log_record(&rec), Some((key, 0x0a0b, &b"v"[..])));
        assert_eq!(decode_log_record(&rec[..20]), None);
        let on_disk = dir_log_bytes(key);
        assert_eq!(&on_disk[..4], &(25u32).to_be_bytes());
    }

    fn dir_log_bytes(key: Uuid) -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        let b = open(dir.path());
        b.create_topic("t").unwrap();
        b.publish("t", key, b"v").unwrap();
        fs::read(dir.path().join("topics/t/log")).unwrap()
    }
}
