//! Request/response framing shared by the bus, store and launcher services.
//!
//! A frame is a 1-byte opcode, a 4-byte big-endian body length, then the body.
//! Bodies are JSON objects. A response echoes the request opcode; its body
//! carries `"ok":true` plus the result fields, or `"ok":false` with `code` and
//! `detail`.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const MAX_FRAME_LEN: usize = 64 * 1024 * 1024;
const HEADER_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("incomplete frame: need {0} more bytes")]
    Incomplete(usize),
    #[error("frame body of {0} bytes exceeds limit")]
    TooLarge(usize),
}

/// Parses one frame from the front of `bytes`, returning the opcode, the body
/// and the number of bytes consumed.
pub fn parse_frame(bytes: &[u8]) -> Result<(u8, &[u8], usize), FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Incomplete(HEADER_LEN - bytes.len()));
    }
    let len = u32::from_be_bytes(bytes[1..5].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(len));
    }
    let end = HEADER_LEN + len;
    if bytes.len() < end {
        return Err(FrameError::Incomplete(end - bytes.len()));
    }
    Ok((bytes[0], &bytes[HEADER_LEN..end], end))
}

pub fn encode_frame(opcode: u8, body: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + body.len());
    buf.push(opcode);
    buf.extend_from_slice(&(body.len() as u32).to_be_bytes());
    buf.extend_from_slice(body);
    buf
}

pub fn write_frame(w: &mut impl Write, opcode: u8, body: &[u8]) -> io::Result<()> {
    w.write_all(&encode_frame(opcode, body))?;
    w.flush()
}

/// Reads one frame. Returns `None` on a clean end of stream before the header.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<(u8, Vec<u8>)>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        let n = r.read(&mut header[got..])?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        got += n;
    }
    let len = u32::from_be_bytes(header[1..5].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            FrameError::TooLarge(len),
        ));
    }
    // Grow with the bytes that actually arrive rather than trusting the header.
    let mut body = Vec::with_capacity(len.min(64 * 1024));
    r.take(len as u64).read_to_end(&mut body)?;
    if body.len() < len {
        return Err(io::ErrorKind::UnexpectedEof.into());
    }
    Ok(Some((header[0], body)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ErrorBody {
    ok: bool,
    code: String,
    detail: String,
}

pub fn ok_reply<T: Serialize>(body: &T) -> Vec<u8> {
    let mut map = match serde_json::to_value(body) {
        Ok(Value::Object(m)) => m,
        Ok(Value::Null) => Map::new(),
        Ok(other) => {
            let mut m = Map::new();
            m.insert("value".into(), other);
            m
        }
        Err(e) => return err_reply("INTERNAL", &e.to_string()),
    };
    map.insert("ok".into(), Value::Bool(true));
    serde_json::to_vec(&Value::Object(map)).expect("json map serializes")
}

pub fn err_reply(code: &str, detail: &str) -> Vec<u8> {
    serde_json::to_vec(&ErrorBody {
        ok: false,
        code: code.to_owned(),
        detail: detail.to_owned(),
    })
    .expect("error body serializes")
}

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("{code}: {detail}")]
    Remote { code: String, detail: String },
    #[error("protocol: {0}")]
    Protocol(String),
}

impl RemoteError {
    /// The service error code, or `IO_FAIL`/`PROTOCOL` for transport problems.
    pub fn code(&self) -> &str {
        match self {
            RemoteError::Io(_) => "IO_FAIL",
            RemoteError::Remote { code, .. } => code,
            RemoteError::Protocol(_) => "PROTOCOL",
        }
    }
}

pub fn parse_reply<T: DeserializeOwned>(body: &[u8]) -> Result<T, RemoteError> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| RemoteError::Protocol(e.to_string()))?;
    match value.get("ok") {
        Some(Value::Bool(true)) => {
            serde_json::from_value(value).map_err(|e| RemoteError::Protocol(e.to_string()))
        }
        Some(Value::Bool(false)) => {
            let err: ErrorBody =
                serde_json::from_value(value).map_err(|e| RemoteError::Protocol(e.to_string()))?;
            Err(RemoteError::Remote {
                code: err.code,
                detail: err.detail,
            })
        }
        _ => Err(RemoteError::Protocol("reply without ok flag".into())),
    }
}

/// Blocking client keeping a small pool of idle connections, so one client
/// can be shared by concurrent callers.
#[derive(Debug)]
pub struct FrameClient {
    addr: String,
    idle: Mutex<Vec<TcpStream>>,
    connect_timeout: Duration,
}

impl FrameClient {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            idle: Mutex::new(Vec::new()),
            connect_timeout: Duration::from_secs(2),
        }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn connect(&self) -> io::Result<TcpStream> {
        let mut last = io::Error::new(io::ErrorKind::NotFound, "address resolved to nothing");
        for sa in self.addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&sa, self.connect_timeout) {
                Ok(s) => {
                    s.set_nodelay(true)?;
                    return Ok(s);
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    fn exchange(stream: &mut TcpStream, opcode: u8, body: &[u8]) -> Result<Vec<u8>, RemoteError> {
        write_frame(stream, opcode, body)?;
        match read_frame(stream)? {
            Some((op, reply)) if op == opcode => Ok(reply),
            Some((op, _)) => Err(RemoteError::Protocol(format!(
                "reply opcode {op} does not echo request opcode {opcode}"
            ))),
            None => Err(RemoteError::Io(io::ErrorKind::UnexpectedEof.into())),
        }
    }

    /// Sends a request and returns the raw reply body. A failure on a reused
    /// connection is retried once on a fresh one.
    pub fn call_raw(&self, opcode: u8, body: &[u8]) -> Result<Vec<u8>, RemoteError> {
        let pooled = self.idle.lock().expect("pool lock").pop();
        if let Some(mut stream) = pooled {
            if let Ok(reply) = Self::exchange(&mut stream, opcode, body) {
                self.idle.lock().expect("pool lock").push(stream);
                return Ok(reply);
            }
        }
        let mut stream = self.connect()?;
        let reply = Self::exchange(&mut stream, opcode, body)?;
        self.idle.lock().expect("pool lock").push(stream);
        Ok(reply)
    }

    pub fn call<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        opcode: u8,
        req: &Req,
    ) -> Result<Resp, RemoteError> {
        let body = serde_json::to_vec(req).map_err(|e| RemoteError::Protocol(e.to_string()))?;
        parse_reply(&self.call_raw(opcode, &body)?)
    }
}

pub type FrameHandler = dyn Fn(u8, &[u8]) -> Vec<u8> + Send + Sync;

/// Accepts connections forever, one thread per connection, answering each
/// frame with `handler(opcode, body)`.
pub fn serve_frames(listener: TcpListener, handler: Arc<FrameHandler>) -> io::Result<()> {
    for conn in listener.incoming() {
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(error = %e, "accept failed");
                continue;
            }
        };
        let handler = Arc::clone(&handler);
        thread::spawn(move || {
            if let Err(e) = handle_conn(stream, &*handler) {
                tracing::debug!(error = %e, "connection closed with error");
            }
        });
    }
    Ok(())
}

fn handle_conn(mut stream: TcpStream, handler: &FrameHandler) -> io::Result<()> {
    stream.set_nodelay(true)?;
    while let Some((opcode, body)) = read_frame(&mut stream)? {
        let reply = handler(opcode, &body);
        write_frame(&mut stream, opcode, &reply)?;
    }
    Ok(())
}

/// Decodes a JSON request body, mapping failure to a `BAD_REQUEST` reply.
pub fn decode_request<T: DeserializeOwned>(body: &[u8]) -> Result<T, Vec<u8>> {
    serde_json::from_slice(body).map_err(|e| err_reply("BAD_REQUEST", &e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn frame_round_trip_and_partial() {
        let f = encode_frame(3, b"{}");
        assert_eq!(parse_frame(&f).unwrap(), (3, &b"{}"[..], 7));
        assert_eq!(parse_frame(&f[..4]), Err(FrameError::Incomplete(1)));
        assert_eq!(parse_frame(&f[..6]), Err(FrameError::Incomplete(1)));
        let huge = [1u8, 0xff, 0xff, 0xff, 0xff];
        assert!(matches!(parse_frame(&huge), Err(FrameError::TooLarge(_))));
    }

    #[test]
    fn read_frame_eof_handling() {
        let mut empty: &[u8] = &[];
        assert!(read_frame(&mut empty).unwrap().is_none());
        let mut partial: &[u8] = &[1, 0];
        assert!(read_frame(&mut partial).is_err());
        let mut short_body: &[u8] = &[1, 0x03, 0xff, 0xff, 0xff, b'{'];
        let err = read_frame(&mut short_body).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::UnexpectedEof);
        let mut exact = &encode_frame(4, b"{}")[..];
        assert_eq!(read_frame(&mut exact).unwrap(), Some((4, b"{}".to_vec())));
    }

    #[test]
    fn replies() {
        #[derive(Debug, Deserialize)]
        struct R {
            offset: u64,
        }
        let r: R = parse_reply(&ok_reply(&json!({"offset": 4}))).unwrap();
        assert_eq!(r.offset, 4);
        let e = parse_reply::<R>(&err_reply("NO_TOPIC", "x")).unwrap_err();
        assert_eq!(e.code(), "NO_TOPIC");
        assert_eq!(parse_reply::<R>(b"[]").unwrap_err().code(), "PROTOCOL");
    }

    #[test]
    fn client_server_over_tcp() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let handler: Arc<FrameHandler> = Arc::new(|op, body| {
            let v: Value = serde_json::from_slice(body).unwrap();
            ok_reply(&json!({"op": op, "echo": v}))
        });
        thread::spawn(move || serve_frames(listener, handler));
        let client = FrameClient::new(addr);
        for i in 0..3 {
            let v: Value = client.call(7, &json!({"i": i})).unwrap();
            assert_eq!(v["op"], 7);
            assert_eq!(v["echo"]["i"], i);
        }
    }
}
