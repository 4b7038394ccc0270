//! Minimal HTTP/1.1 client shared by all flood workers.
//!
//! One client instance owns one connection pool. A connection only exists
//! while a pool slot is held and is returned to the idle list before the slot
//! is released, so the target never sees more than `max_connections` sockets
//! from a run. Response bodies are read for framing but only the first 4 KiB
//! is retained for marker scanning.

use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::sync::Semaphore;
use url::Url;

use crate::metrics::TransportFailure;

pub const BODY_PREFIX_LIMIT: usize = 4096;
const MAX_HEAD_BYTES: usize = 16 * 1024;

#[derive(Debug, Error)]
#[error("{detail}")]
pub struct ClientError {
    pub kind: TransportFailure,
    pub detail: String,
}

impl ClientError {
    fn protocol(detail: impl Into<String>) -> ClientError {
        ClientError {
            kind: TransportFailure::Protocol,
            detail: detail.into(),
        }
    }
}

/// Parsed response envelope: status plus at most the first 4 KiB of body.
#[derive(Debug)]
pub struct ClientResponse {
    pub status: u16,
    pub body_prefix: Vec<u8>,
}

/// Where a request attempt currently is, for classifying an elapsed timeout.
struct Phase(AtomicU8);

impl Phase {
    const WAITING: u8 = 0;
    const CONNECTING: u8 = 1;
    const ACTIVE: u8 = 2;

    fn new() -> Phase {
        Phase(AtomicU8::new(Phase::WAITING))
    }

    fn set(&self, value: u8) {
        self.0.store(value, Ordering::Relaxed);
    }

    fn get(&self) -> u8 {
        self.0.load(Ordering::Relaxed)
    }
}

enum AttemptError {
    /// The connection yielded nothing at all; safe to retry on a fresh one
    /// when it came from the idle pool.
    Stale(String),
    Fatal(ClientError),
}

pub struct HttpClient {
    host_port: String,
    request_timeout: Duration,
    slots: Semaphore,
    idle: Mutex<Vec<TcpStream>>,
}

impl HttpClient {
    pub fn new(target: &Url, max_connections: u32, request_timeout: Duration) -> HttpClient {
        let host = target.host_str().unwrap_or("127.0.0.1");
        let port = target.port_or_known_default().unwrap_or(80);
        HttpClient {
            host_port: format!("{host}:{port}"),
            request_timeout,
            slots: Semaphore::new(max_connections as usize),
            idle: Mutex::new(Vec::new()),
        }
    }

    /// Send one already-serialized request and read its response.
    pub async fn execute(&self, request: &[u8]) -> Result<ClientResponse, ClientError> {
        let phase = Phase::new();
        match tokio::time::timeout(self.request_timeout, self.execute_inner(request, &phase)).await
        {
            Ok(result) => result,
            Err(_) => Err(if phase.get() == Phase::CONNECTING {
                ClientError {
                    kind: TransportFailure::Connect,
                    detail: "connect timed out".into(),
                }
            } else {
                ClientError {
                    kind: TransportFailure::Timeout,
                    detail: format!("no response within {}ms", self.request_timeout.as_millis()),
                }
            }),
        }
    }

    async fn execute_inner(
        &self,
        request: &[u8],
        phase: &Phase,
    ) -> Result<ClientResponse, ClientError> {
        let _slot = self
            .slots
            .acquire()
            .await
            .expect("pool semaphore is never closed");
        for attempt in 0..2u8 {
            let (mut stream, reused) = match self.checkout() {
                Some(stream) => (stream, true),
                None => {
                    phase.set(Phase::CONNECTING);
                    let stream = TcpStream::connect(self.host_port.as_str())
                        .await
                        .map_err(|e| ClientError {
                            kind: TransportFailure::Connect,
                            detail: format!("connect to {} failed: {e}", self.host_port),
                        })?;
                    (stream, false)
                }
            };
            phase.set(Phase::ACTIVE);
            match exchange(&mut stream, request).await {
                Ok((response, reusable)) => {
                    if reusable {
                        // Returned before the slot frees; total sockets stay
                        // bounded by the slot count.
                        self.checkin(stream);
                    }
                    return Ok(response);
                }
                Err(AttemptError::Stale(_)) if reused && attempt == 0 => continue,
                Err(AttemptError::Stale(detail)) => return Err(ClientError::protocol(detail)),
                Err(AttemptError::Fatal(e)) => return Err(e),
            }
        }
        unreachable!("second attempt always runs on a fresh connection")
    }

    fn checkout(&self) -> Option<TcpStream> {
        self.idle.lock().expect("pool lock never poisoned").pop()
    }

    fn checkin(&self, stream: TcpStream) {
        self.idle.lock().expect("pool lock never poisoned").push(stream);
    }
}

/// Write one request, read one response. Returns the response and whether
/// the connection is clean enough to reuse.
async fn exchange(
    stream: &mut TcpStream,
    request: &[u8],
) -> Result<(ClientResponse, bool), AttemptError> {
    if let Err(e) = stream.write_all(request).await {
        return Err(AttemptError::Stale(format!("request write failed: {e}")));
    }

    let mut buf: Vec<u8> = Vec::with_capacity(2048);
    let head_end = loop {
        if let Some(end) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            break end;
        }
        if buf.len() > MAX_HEAD_BYTES {
            return Err(AttemptError::Fatal(ClientError::protocol(
                "response head too large",
            )));
        }
        match read_more(stream, &mut buf).await {
            Ok(0) if buf.is_empty() => {
                return Err(AttemptError::Stale(
                    "connection closed before response".into(),
                ))
            }
            Ok(0) => {
                return Err(AttemptError::Fatal(ClientError::protocol(
                    "connection closed mid-head",
                )))
            }
            Ok(_) => {}
            Err(e) if buf.is_empty() => {
                return Err(AttemptError::Stale(format!("read failed: {e}")))
            }
            Err(e) => {
                return Err(AttemptError::Fatal(ClientError::protocol(format!(
                    "read failed: {e}"
                ))))
            }
        }
    };

    let head = parse_response_head(&buf[..head_end]).map_err(AttemptError::Fatal)?;
    buf.drain(..head_end + 4);

    let mut body_prefix = Vec::new();
    let bodyless = (100..200).contains(&head.status) || head.status == 204 || head.status == 304;
    let mut framed = true;
    if bodyless {
        // nothing to read
    } else if head.chunked {
        read_chunked_body(stream, &mut buf, &mut body_prefix)
            .await
            .map_err(AttemptError::Fatal)?;
    } else if let Some(length) = head.content_length {
        read_exact_body(stream, &mut buf, length, &mut body_prefix)
            .await
            .map_err(AttemptError::Fatal)?;
    } else {
        // No framing information: body runs to EOF and the connection dies.
        framed = false;
        loop {
            match read_more(stream, &mut buf).await {
                Ok(0) => break,
                Ok(_) => {
                    take_prefix(&mut buf, usize::MAX, &mut body_prefix);
                }
                Err(e) => {
                    return Err(AttemptError::Fatal(ClientError::protocol(format!(
                        "read failed: {e}"
                    ))))
                }
            }
        }
        take_prefix(&mut buf, usize::MAX, &mut body_prefix);
    }

    let reusable = framed && head.keep_alive && buf.is_empty();
    Ok((
        ClientResponse {
            status: head.status,
            body_prefix,
        },
        reusable,
    ))
}

struct ResponseHead {
    status: u16,
    keep_alive: bool,
    content_length: Option<usize>,
    chunked: bool,
}

fn parse_response_head(raw: &[u8]) -> Result<ResponseHead, ClientError> {
    let text = std::str::from_utf8(raw)
        .map_err(|_| ClientError::protocol("response head is not valid utf-8"))?;
    let mut lines = text.split("\r\n");
    let status_line = lines.next().unwrap_or("");
    let mut parts = status_line.split_ascii_whitespace();
    let version = parts.next().unwrap_or("");
    if !version.starts_with("HTTP/1.") {
        return Err(ClientError::protocol(format!(
            "unsupported protocol in status line {status_line:?}"
        )));
    }
    let status: u16 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|s| (100..=599).contains(s))
        .ok_or_else(|| ClientError::protocol(format!("bad status line {status_line:?}")))?;

    let mut keep_alive = version != "HTTP/1.0";
    let mut content_length = None;
    let mut chunked = false;
    for line in lines {
        let Some((name, value)) = line.split_once(':') else { continue };
        let value = value.trim();
        if name.eq_ignore_ascii_case("content-length") {
            let parsed: usize = value
                .parse()
                .map_err(|_| ClientError::protocol("invalid content-length"))?;
            if let Some(existing) = content_length {
                if existing != parsed {
                    return Err(ClientError::protocol("conflicting content-length headers"));
                }
            }
            content_length = Some(parsed);
        } else if name.eq_ignore_ascii_case("transfer-encoding") {
            chunked = value.to_ascii_lowercase().contains("chunked");
        } else if name.eq_ignore_ascii_case("connection") {
            if value.eq_ignore_ascii_case("close") {
                keep_alive = false;
            } else if value.eq_ignore_ascii_case("keep-alive") {
                keep_alive = true;
            }
        }
    }
    Ok(ResponseHead {
        status,
        keep_alive,
        content_length,
        chunked,
    })
}

async fn read_more(stream: &mut TcpStream, buf: &mut Vec<u8>) -> std::io::Result<usize> {
    let mut chunk = [0u8; 4096];
    let n = stream.read(&mut chunk).await?;
    buf.extend_from_slice(&chunk[..n]);
    Ok(n)
}

/// Move up to `limit` buffered bytes into the retained prefix, dropping the
/// rest once the prefix cap is reached.
fn take_prefix(buf: &mut Vec<u8>, limit: usize, prefix: &mut Vec<u8>) {
    let take = buf.len().min(limit);
    let room = BODY_PREFIX_LIMIT.saturating_sub(prefix.len());
    prefix.extend_from_slice(&buf[..take.min(room)]);
    buf.drain(..take);
}

async fn read_exact_body(
    stream: &mut TcpStream,
    buf: &mut Vec<u8>,
    length: usize,
    prefix: &mut Vec<u8>,
) -> Result<(), ClientError> {
    let mut remaining = length;
    loop {
        let have = buf.len().min(remaining);
        remaining -= have;
        take_prefix(buf, have, prefix);
        if remaining == 0 {
            return Ok(());
        }
        match read_more(stream, buf).await {
            Ok(0) => return Err(ClientError::protocol("connection closed mid-body")),
            Ok(_) => {}
            Err(e) => return Err(ClientError::protocol(format!("read failed: {e}"))),
        }
    }
}

async fn read_line(stream: &mut TcpStream, buf: &mut Vec<u8>) -> Result<String, ClientError> {
    loop {
        if let Some(pos) = buf.windows(2).position(|w| w == b"\r\n") {
            let line = String::from_utf8_lossy(&buf[..pos]).into_owned();
            buf.drain(..pos + 2);
            return Ok(line);
        }
        if buf.len() > MAX_HEAD_BYTES {
            return Err(ClientError::protocol("chunk header too large"));
        }
        match read_more(stream, buf).await {
            Ok(0) => return Err(ClientError::protocol("connection closed mid-chunk")),
            Ok(_) => {}
            Err(e) => return Err(ClientError::protocol(format!("read failed: {e}"))),
        }
    }
}

async fn read_chunked_body(
    stream: &mut TcpStream,
    buf: &mut Vec<u8>,
    prefix: &mut Vec<u8>,
) -> Result<(), ClientError> {
    loop {
        let size_line = read_line(stream, buf).await?;
        let hex = size_line.split(';').next().unwrap_or("").trim();
        let size = usize::from_str_radix(hex, 16)
            .map_err(|_| ClientError::protocol(format!("bad chunk size {hex:?}")))?;
        if size == 0 {
            // trailers end with an empty line
            loop {
                if read_line(stream, buf).await?.is_empty() {
                    return Ok(());
                }
            }
        }
        let mut remaining = size;
        while remaining > 0 {
            let have = buf.len().min(remaining);
            remaining -= have;
            take_prefix(buf, have, prefix);
            if remaining > 0 {
                match read_more(stream, buf).await {
                    Ok(0) => return Err(ClientError::protocol("connection closed mid-chunk")),
                    Ok(_) => {}
                    Err(e) => return Err(ClientError::protocol(format!("read failed: {e}"))),
                }
            }
        }
        let crlf = read_line(stream, buf).await?;
        if !crlf.is_empty() {
            return Err(ClientError::protocol("missing CRLF after chunk"));
        }
    }
}
