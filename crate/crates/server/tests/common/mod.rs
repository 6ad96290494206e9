#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;

use arsls_core::session::SessionPlan;
use arsls_server::config::{Inputs, ServerConfig};
use arsls_server::room::{Room, StatsSnapshot};
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;

pub fn local_config(record: Option<&Path>) -> ServerConfig {
    ServerConfig {
        http_addr: "127.0.0.1:0".into(),
        ingest_addr: "127.0.0.1:0".into(),
        record: record.map(Path::to_path_buf),
        ..ServerConfig::default()
    }
}

pub fn inputs(plan: SessionPlan) -> Inputs {
    let mut i = Inputs::load(None, None, None, None).unwrap();
    i.plan = plan;
    i
}

pub async fn start(plan: SessionPlan, record: Option<&Path>) -> Room {
    Room::start(&local_config(record), inputs(plan)).await.unwrap()
}

/// Minimal HTTP/1.1 GET; returns (status, body).
pub async fn http_get(addr: SocketAddr, path: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").as_bytes())
        .await
        .unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).await.unwrap();
    let text = String::from_utf8(raw).unwrap();
    let (head, body) = text.split_once("\r\n\r\n").unwrap();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = if head.to_ascii_lowercase().contains("transfer-encoding: chunked") { dechunk(body) } else { body.to_owned() };
    (status, body)
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    loop {
        let (len, rest) = s.split_once("\r\n").unwrap();
        let n = usize::from_str_radix(len.trim(), 16).unwrap();
        if n == 0 {
            return out;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
}

pub async fn stats(addr: SocketAddr) -> StatsSnapshot {
    serde_json::from_str(&http_get(addr, "/stats").await.1).unwrap()
}

/// A line-protocol ingest client that reads one reply per line sent.
pub struct Ingest {
    reader: BufReader<tokio::net::tcp::OwnedReadHalf>,
    writer: tokio::net::tcp::OwnedWriteHalf,
}

impl Ingest {
    pub async fn connect(addr: SocketAddr) -> Self {
        let (r, w) = TcpStream::connect(addr).await.unwrap().into_split();
        Self { reader: BufReader::new(r), writer: w }
    }

    pub async fn send(&mut self, line: &str) -> serde_json::Value {
        self.writer.write_all(format!("{line}\n").as_bytes()).await.unwrap();
        let mut reply = String::new();
        self.reader.read_line(&mut reply).await.unwrap();
        serde_json::from_str(&reply).unwrap_or_else(|e| panic!("bad reply {reply:?}: {e}"))
    }
}
