use std::time::Duration;

use uuid::Uuid;
use vpe_core::wire::{FrameClient, RemoteError};

use crate::protocol::*;
use crate::{Bus, BusError, BusMessage, ConsumerId, Subscription, TopicInfo};

/// [`Bus`] over TCP. Safe to share between threads.
#[derive(Debug)]
pub struct RemoteBus {
    client: FrameClient,
}

impl From<RemoteError> for BusError {
    fn from(e: RemoteError) -> Self {
        match e {
            RemoteError::Io(io) => BusError::Io(io),
            RemoteError::Remote { code, detail } => BusError::Remote { code, detail },
            RemoteError::Protocol(p) => BusError::Remote {
                code: "PROTOCOL".into(),
                detail: p,
            },
        }
    }
}

impl RemoteBus {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            client: FrameClient::new(addr),
        }
    }

    pub fn addr(&self) -> &str {
        self.client.addr()
    }
}

impl Bus for RemoteBus {
    fn create_topic(&self, name: &str) -> Result<TopicInfo, BusError> {
        Ok(self
            .client
            .call(OP_CREATE_TOPIC, &TopicRequest { topic: name.into() })?)
    }

    fn publish(&self, topic: &str, key: Uuid, value: &[u8]) -> Result<u64, BusError> {
        let req = PublishRequest {
            topic: topic.into(),
            key,
            value: encode_value(value),
        };
        let r: PublishReply = self.client.call(OP_PUBLISH, &req)?;
        Ok(r.offset)
    }

    fn subscribe(&self, topic: &str, group: &str) -> Result<Subscription, BusError> {
        let req = SubscribeRequest {
            topic: topic.into(),
            group: group.into(),
        };
        Ok(self.client.call(OP_SUBSCRIBE, &req)?)
    }

    fn poll(
        &self,
        consumer: ConsumerId,
        max: usize,
        timeout: Duration,
    ) -> Result<Vec<BusMessage>, BusError> {
        let req = PollRequest {
            consumer,
            max_messages: max,
            timeout_ms: timeout.as_millis().min(u64::MAX as u128) as u64,
        };
        let r: PollReply = self.client.call(OP_POLL, &req)?;
        r.messages
            .into_iter()
            .map(|m| {
                m.into_message().map_err(|e| BusError::Remote {
                    code: "PROTOCOL".into(),
                    detail: e.to_string(),
                })
            })
            .collect()
    }

    fn commit(&self, consumer: ConsumerId, next_offset: u64) -> Result<(), BusError> {
        let _: Empty = self.client.call(
            OP_COMMIT,
            &CommitRequest {
                consumer,
                next_offset,
            },
        )?;
        Ok(())
    }

    fn close(&self, consumer: ConsumerId) -> Result<(), BusError> {
        let _: Empty = self.client.call(OP_CLOSE, &CloseRequest { consumer })?;
        Ok(())
    }

    fn topic_len(&self, topic: &str) -> Result<u64, BusError> {
        let r: TopicInfo = self.client.call(
            OP_STAT,
            &TopicRequest {
                topic: topic.into(),
            },
        )?;
        Ok(r.length)
    }
}
