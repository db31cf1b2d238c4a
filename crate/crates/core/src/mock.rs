//! Deterministic stand-in for the legacy database: an HDP/0 server and a
//! scripted client.
//!
//! HDP/0 requests are single `\n`-terminated lines:
//!
//! * `AUTH <user> <password>` → `OK <license>\n` or `ERR auth\n`
//! * `GET <table>` → per record `STX (US name RS value)* ETX`, then one `EOT`;
//!   `ERR auth\n` before a successful AUTH, `ERR table\n` for unknown tables
//! * `QUIT` → the server closes the connection
//!
//! Anything else is answered with `ERR proto\n` and the connection is closed.

use std::collections::{BTreeMap, HashSet};
use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub const STX: u8 = 0x02;
pub const ETX: u8 = 0x03;
pub const EOT: u8 = 0x04;
pub const US: u8 = 0x1F;
pub const RS: u8 = 0x1E;
/// A reply is complete once its last byte is one of these.
pub const REPLY_TERMINATORS: [u8; 2] = [EOT, b'\n'];
/// Longest request line the server accepts, newline excluded.
pub const MAX_LINE: usize = 64 * 1024;

#[derive(Debug, Error)]
pub enum MockError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("dataset is not valid JSON: {0}")]
    DatasetJson(#[from] serde_json::Error),
    #[error("cannot connect to {addr}: {source}")]
    ConnectFailed { addr: String, source: io::Error },
    #[error("no complete reply to command {index} within {timeout_ms} ms")]
    ReplyTimeout { index: usize, timeout_ms: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockUser {
    pub username: String,
    pub password: String,
    pub license: String,
}

pub type Record = Vec<(String, String)>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockDataset {
    pub users: Vec<MockUser>,
    pub tables: BTreeMap<String, Vec<Record>>,
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| (0x21..=0x7E).contains(&b))
}

fn is_printable(s: &str) -> bool {
    s.bytes().all(|b| (0x20..=0x7E).contains(&b))
}

impl MockDataset {
    /// One user `demo`/`demo-pass` and a two-record `contacts` table.
    pub fn fixture() -> Self {
        let rec = |name: &str, city: &str| {
            vec![
                ("name".to_string(), name.to_string()),
                ("city".to_string(), city.to_string()),
            ]
        };
        MockDataset {
            users: vec![MockUser {
                username: "demo".into(),
                password: "demo-pass".into(),
                license: "LIC-0001".into(),
            }],
            tables: BTreeMap::from([(
                "contacts".to_string(),
                vec![rec("Alice", "Berlin"), rec("Bob", "Kiel")],
            )]),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, MockError> {
        let ds: MockDataset = serde_json::from_str(text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), MockError> {
        let bad = |m: String| Err(MockError::InvalidDataset(m));
        let mut seen = HashSet::new();
        for u in &self.users {
            if !is_token(&u.username) || !is_token(&u.password) || !is_token(&u.license) {
                return bad(format!("user `{}` has a non-token field", u.username));
            }
            if !seen.insert(&u.username) {
                return bad(format!("duplicate user `{}`", u.username));
            }
        }
        for (table, records) in &self.tables {
            if !is_token(table) {
                return bad(format!("invalid table name `{table}`"));
            }
            for (name, value) in records.iter().flatten() {
                if name.is_empty() || !is_printable(name) || !is_printable(value) {
                    return bad(format!("table `{table}` has a non-printable or empty field"));
                }
            }
        }
        Ok(())
    }

    fn user(&self, name: &[u8]) -> Option<&MockUser> {
        self.users.iter().find(|u| u.username.as_bytes() == name)
    }
}

/// Encodes one table in the GET reply framing.
pub fn encode_table(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    for rec in records {
        out.push(STX);
        for (name, value) in rec {
            out.push(US);
            out.extend_from_slice(name.as_bytes());
            out.push(RS);
            out.extend_from_slice(value.as_bytes());
        }
        out.push(ETX);
    }
    out.push(EOT);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub bytes: Vec<u8>,
    pub close: bool,
}

impl Reply {
    fn send(bytes: impl Into<Vec<u8>>) -> Self {
        Reply {
            bytes: bytes.into(),
            close: false,
        }
    }

    fn proto_error() -> Self {
        Reply {
            bytes: b"ERR proto\n".to_vec(),
            close: true,
        }
    }
}

/// Per-connection protocol state.
#[derive(Debug, Default)]
pub struct HdpConnection {
    authenticated: bool,
}

impl HdpConnection {
    /// Answers one request line (without its trailing newline).
    pub fn handle_line(&mut self, line: &[u8], dataset: &MockDataset) -> Reply {
        let words: Vec<&[u8]> = line.split(|&b| b == b' ').collect();
        match words[..] {
            [b"AUTH", user, pass] if !user.is_empty() && !pass.is_empty() => {
                match dataset.user(user) {
                    Some(u) if u.password.as_bytes() == pass => {
                        self.authenticated = true;
                        Reply::send(format!("OK {}\n", u.license))
                    }
                    _ => {
                        self.authenticated = false;
                        Reply::send(&b"ERR auth\n"[..])
                    }
                }
            }
            [b"GET", table] if !table.is_empty() => {
                if !self.authenticated {
                    return Reply::send(&b"ERR auth\n"[..]);
                }
                match std::str::from_utf8(table).ok().and_then(|t| dataset.tables.get(t)) {
                    Some(records) => Reply::send(encode_table(records)),
                    None => Reply::send(&b"ERR table\n"[..]),
                }
            }
            [b"QUIT"] => Reply {
                bytes: Vec::new(),
                close: true,
            },
            _ => Reply::proto_error(),
        }
    }
}

async fn serve_connection(mut stream: TcpStream, dataset: Arc<MockDataset>) -> io::Result<()> {
    let mut conn = HdpConnection::default();
    let mut pending: Vec<u8> = Vec::new();
    let mut buf = vec![0u8; 16 * 1024];
    loop {
        while let Some(nl) = pending.iter().position(|&b| b == b'\n') {
            let line: Vec<u8> = pending.drain(..=nl).collect();
            let reply = conn.handle_line(&line[..line.len() - 1], &dataset);
            stream.write_all(&reply.bytes).await?;
            if reply.close {
                stream.shutdown().await?;
                return Ok(());
            }
        }
        if pending.len() > MAX_LINE {
            stream.write_all(&Reply::proto_error().bytes).await?;
            stream.shutdown().await?;
            return Ok(());
        }
        let n = stream.read(&mut buf).await?;
        if n == 0 {
            return Ok(());
        }
        pending.extend_from_slice(&buf[..n]);
    }
}

/// Accepts connections until `shutdown` resolves. Each connection has its
/// own auth state; the dataset is shared read-only.
pub async fn serve_mock(
    listener: TcpListener,
    dataset: Arc<MockDataset>,
    shutdown: impl Future<Output = ()>,
) -> io::Result<()> {
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            _ = &mut shutdown => return Ok(()),
            accepted = listener.accept() => {
                let (stream, peer) = accepted?;
                let dataset = Arc::clone(&dataset);
                tokio::spawn(async move {
                    if let Err(e) = serve_connection(stream, dataset).await {
                        tracing::debug!(%peer, error = %e, "mock connection ended with error");
                    }
                });
            }
        }
    }
}

/// A mock server running on a background task; stopped on drop.
pub struct MockServer {
    local_addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<io::Result<()>>,
}

impl MockServer {
    pub async fn start(addr: &str, dataset: MockDataset) -> Result<Self, MockError> {
        dataset.validate()?;
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(serve_mock(listener, Arc::new(dataset), async {
            let _ = rx.await;
        }));
        Ok(MockServer {
            local_addr,
            shutdown: Some(tx),
            task,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub async fn stop(mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        (&mut self.task).await.unwrap_or(Ok(()))
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub sent: Vec<u8>,
    pub received: Vec<u8>,
}

pub type Transcript = Vec<Exchange>;

pub fn reply_complete(buf: &[u8]) -> bool {
    buf.last().is_some_and(|b| REPLY_TERMINATORS.contains(b))
}

/// Sends each command (a newline is appended) and reads its full reply.
/// A reply ends at a terminator byte or when the server closes.
pub async fn scripted_client(
    addr: &str,
    commands: &[String],
    reply_timeout: Duration,
) -> Result<Transcript, MockError> {
    let mut stream = TcpStream::connect(addr)
        .await
        .map_err(|source| MockError::ConnectFailed {
            addr: addr.to_string(),
            source,
        })?;
    let mut transcript = Vec::with_capacity(commands.len());
    let mut buf = vec![0u8; 16 * 1024];
    let mut closed = false;
    for (index, cmd) in commands.iter().enumerate() {
        let mut sent = cmd.as_bytes().to_vec();
        sent.push(b'\n');
        stream.write_all(&sent).await?;
        let mut received = Vec::new();
        let read_reply = async {
            while !reply_complete(&received) {
                let n = stream.read(&mut buf).await?;
                if n == 0 {
                    closed = true;
                    break;
                }
                received.extend_from_slice(&buf[..n]);
            }
            Ok::<_, io::Error>(())
        };
        tokio::time::timeout(reply_timeout, read_reply)
            .await
            .map_err(|_| MockError::ReplyTimeout {
                index,
                timeout_ms: reply_timeout.as_millis() as u64,
            })??;
        transcript.push(Exchange { sent, received });
        if closed {
            break;
        }
    }
    if !closed {
        stream.shutdown().await?;
    }
    Ok(transcript)
}

/// Parses a client script: one command per line, blank lines and `#`
/// comments skipped.
pub fn parse_client_script(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(str::to_string)
        .collect()
}
