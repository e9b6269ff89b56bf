use std::net::TcpListener;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use vpe_core::wire::{decode_request, err_reply, ok_reply, serve_frames};

use crate::protocol::*;
use crate::{Broker, Bus, BusError};

fn reply<T: Serialize>(r: Result<T, BusError>) -> Vec<u8> {
    match r {
        Ok(v) => ok_reply(&v),
        Err(e) => {
            if e.is_io() {
                tracing::error!(error = %e, "bus storage failure");
            }
            err_reply(e.code(), &e.to_string())
        }
    }
}

/// Executes one framed request against `broker` and returns the reply body.
pub fn handle_request(broker: &Broker, opcode: u8, body: &[u8]) -> Vec<u8> {
    macro_rules! req {
        ($t:ty) => {
            match decode_request::<$t>(body) {
                Ok(r) => r,
                Err(reply) => return reply,
            }
        };
    }
    match opcode {
        OP_CREATE_TOPIC => {
            let r = req!(TopicRequest);
            reply(broker.create_topic(&r.topic))
        }
        OP_PUBLISH => {
            let r = req!(PublishRequest);
            let value = match decode_value(&r.value) {
                Ok(v) => v,
                Err(e) => return err_reply("BAD_REQUEST", &format!("value: {e}")),
            };
            reply(
                broker
                    .publish(&r.topic, r.key, &value)
                    .map(|offset| PublishReply { offset }),
            )
        }
        OP_SUBSCRIBE => {
            let r = req!(SubscribeRequest);
            reply(broker.subscribe(&r.topic, &r.group))
        }
        OP_POLL => {
            let r = req!(PollRequest);
            let timeout = Duration::from_millis(r.timeout_ms.min(MAX_POLL_TIMEOUT_MS));
            reply(
                broker
                    .poll(r.consumer, r.max_messages, timeout)
                    .map(|ms| PollReply {
                        messages: ms.iter().map(WireMessage::from).collect(),
                    }),
            )
        }
        OP_COMMIT => {
            let r = req!(CommitRequest);
            reply(broker.commit(r.consumer, r.next_offset).map(|_| Empty {}))
        }
        OP_CLOSE => {
            let r = req!(CloseRequest);
            reply(broker.close(r.consumer).map(|_| Empty {}))
        }
        OP_STAT => {
            let r = req!(TopicRequest);
            reply(broker.topic_len(&r.topic).map(|length| crate::TopicInfo {
                name: r.topic,
                length,
            }))
        }
        other => err_reply("BAD_REQUEST", &format!("unknown opcode {other}")),
    }
}

/// Serves `broker` on `listener` until the process exits.
pub fn serve(broker: Arc<Broker>, listener: TcpListener) -> std::io::Result<()> {
    serve_frames(
        listener,
        Arc::new(move |op, body: &[u8]| handle_request(&broker, op, body)),
    )
}
