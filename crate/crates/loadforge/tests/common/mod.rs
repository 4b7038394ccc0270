//! Shared helpers for the integration and acceptance suites.
#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;

use loadforge::target::{self, ServerConfig, ServerHandle, StatsSnapshot};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};

/// Start the bundled target on an ephemeral loopback port.
pub async fn start_target(mutate: impl FnOnce(&mut ServerConfig)) -> ServerHandle {
    let mut config = ServerConfig {
        port: 0,
        ..ServerConfig::default()
    };
    mutate(&mut config);
    target::start(config).await.expect("target must start")
}

/// Fast, always-admitting target for tests that are not about saturation.
pub async fn start_idle_target() -> ServerHandle {
    start_target(|c| {
        c.work_ms = 0;
        c.capacity = 64;
        c.queue_depth = 64;
    })
    .await
}

/// One-shot HTTP request; returns (status, body).
pub async fn http_request(addr: SocketAddr, raw: &str) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).await.expect("connect");
    stream.write_all(raw.as_bytes()).await.expect("write");
    let mut response = Vec::new();
    stream.read_to_end(&mut response).await.expect("read");
    let text = String::from_utf8_lossy(&response).into_owned();
    let status: u16 = text
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .expect("status line");
    let body = text
        .split_once("\r\n\r\n")
        .map(|(_, b)| b.to_string())
        .unwrap_or_default();
    (status, body)
}

pub async fn http_get(addr: SocketAddr, path: &str) -> (u16, String) {
    let raw = format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n");
    http_request(addr, &raw).await
}

pub async fn post_search(addr: SocketAddr, course: &str) -> (u16, String) {
    let body = format!("courseName={course}");
    let raw = format!(
        "POST /search HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/x-www-form-urlencoded\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    http_request(addr, &raw).await
}

pub async fn fetch_stats(addr: SocketAddr) -> StatsSnapshot {
    let (status, body) = http_get(addr, "/stats").await;
    assert_eq!(status, 200, "stats endpoint must answer");
    serde_json::from_str(&body).expect("stats JSON parses")
}

pub fn search_url(addr: SocketAddr) -> url::Url {
    url::Url::parse(&format!("http://{addr}/search")).expect("valid url")
}

/// Tiny deterministic responder: every request gets 200 plus the success
/// token, over keep-alive. Drops with the test runtime.
pub async fn start_success_stub() -> SocketAddr {
    start_stub(b"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\nContent-Length: 20\r\n\r\n<h1>SUCCESS</h1>....").await
}

/// Stub that accepts connections and reads forever without answering.
pub async fn start_silent_stub() -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.expect("bind stub");
    let addr = listener.local_addr().expect("stub addr");
    tokio::spawn(async move {
        loop {
            let Ok((mut stream, _)) = listener.accept().await else { break };
            tokio::spawn(async move {
                let mut sink = [0u8; 4096];
                while let Ok(n) = stream.read(&mut sink).await {
                    if n == 0 {
                        break;
                    }
                }
            });
        }
    });
    addr
}

async fn start_stub(response: &'static [u8]) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.expect("bind stub");
    let addr = listener.local_addr().expect("stub addr");
    tokio::spawn(async move {
        loop {
            let Ok((mut stream, _)) = listener.accept().await else { break };
            tokio::spawn(async move {
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                while let Ok(n) = stream.read(&mut chunk).await {
                    if n == 0 {
                        break;
                    }
                    buf.extend_from_slice(&chunk[..n]);
                    // answer once per buffered request head+body; requests
                    // here are small enough to arrive whole
                    while let Some(end) = request_end(&buf) {
                        buf.drain(..end);
                        if stream.write_all(response).await.is_err() {
                            return;
                        }
                    }
                }
            });
        }
    });
    addr
}

/// Locate the end of one buffered request (head plus content-length body).
fn request_end(buf: &[u8]) -> Option<usize> {
    let head_end = buf.windows(4).position(|w| w == b"\r\n\r\n")? + 4;
    let head = std::str::from_utf8(&buf[..head_end]).ok()?;
    let content_length = head
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    (buf.len() >= head_end + content_length).then_some(head_end + content_length)
}

/// Parse every JSONL line of a run log.
pub fn read_log(path: &Path) -> Vec<serde_json::Value> {
    let raw = std::fs::read_to_string(path).expect("log readable");
    raw.lines()
        .map(|l| serde_json::from_str(l).expect("log line parses"))
        .collect()
}

pub fn payload_sequence(path: &Path) -> Vec<String> {
    read_log(path)
        .iter()
        .map(|v| v["payload"].as_str().expect("payload string").to_string())
        .collect()
}

pub fn temp_log(dir: &tempfile::TempDir, name: &str) -> std::path::PathBuf {
    dir.path().join(name)
}
