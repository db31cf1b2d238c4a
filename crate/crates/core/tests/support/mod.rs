#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use hyrouter::capture::{Direction, Packet, Session, SessionId};
use hyrouter::cleanse::{DelimiterSpec, Element, StructuredDocument, StructuredNode, MAX_DEPTH, ROOT_NAME};
use hyrouter::mock::{MockDataset, MockServer};
use hyrouter::proxy::{Proxy, ProxyConfig, ProxyEvent};
use rand::Rng;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot};

pub const GOLDEN_ID: SessionId = SessionId([0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15]);
pub const GOLDEN_OPENED_US: u64 = 1_700_000_000_000_000;
pub const CONTACTS_REPLY: &[u8] =
    b"\x02\x1fname\x1eAlice\x1fcity\x1eBerlin\x03\x02\x1fname\x1eBob\x1fcity\x1eKiel\x03\x04";

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).expect("fixture exists")
}

/// Hex dump with `#` comments and arbitrary whitespace.
pub fn load_hex_fixture(name: &str) -> Vec<u8> {
    let digits: String = fixture_text(name)
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.chars().filter(|c| !c.is_whitespace()))
        .collect();
    hex::decode(digits).expect("valid hex fixture")
}

pub fn golden_capture_bytes() -> Vec<u8> {
    load_hex_fixture("golden_session.hyc.hex")
}

/// The session the golden capture is expected to decode to.
pub fn golden_session() -> Session {
    let payloads: [(Direction, &[u8]); 4] = [
        (Direction::ClientToServer, b"AUTH demo demo-pass\n"),
        (Direction::ServerToClient, b"OK LIC-0001\n"),
        (Direction::ClientToServer, b"GET contacts\n"),
        (Direction::ServerToClient, CONTACTS_REPLY),
    ];
    let mut s = Session::new(GOLDEN_ID, GOLDEN_OPENED_US);
    for (i, (direction, payload)) in payloads.into_iter().enumerate() {
        s.packets.push(Packet {
            seq: i as u64,
            timestamp_us: GOLDEN_OPENED_US + 1000 * (i as u64 + 1),
            direction,
            payload: payload.to_vec(),
        });
    }
    s
}

pub fn golden_xml() -> String {
    fixture_text("golden_contacts.xml")
}

/// `(sent, received)` pairs from the golden transcript fixture.
pub fn golden_transcript() -> Vec<(Vec<u8>, Vec<u8>)> {
    let text = fixture_text("golden_transcript.txt");
    let mut sent = Vec::new();
    let mut received = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let (tag, hexed) = line.split_once(' ').expect("tagged line");
        let bytes = hex::decode(hexed.trim()).expect("hex");
        match tag {
            ">" => sent.push(bytes),
            "<" => received.push(bytes),
            _ => panic!("bad tag {tag}"),
        }
    }
    sent.into_iter().zip(received).collect()
}

pub fn session_from(packets: &[(Direction, Vec<u8>)]) -> Session {
    let mut s = Session::new(SessionId::random(), 0);
    for (i, (d, p)) in packets.iter().enumerate() {
        s.packets.push(Packet {
            seq: i as u64,
            timestamp_us: i as u64,
            direction: *d,
            payload: p.clone(),
        });
    }
    s
}

// ---------------------------------------------------------------------------
// Reference tree builder for the cleanse module.
//
// Recursive descent: from the current offset, search forward for the
// earliest position where either the enclosing element's close sequence or
// any open sequence (first declared wins) matches, emit everything before it
// as text, then either return to the parent or recurse into the new element.
// Quadratic in the worst case and structurally unrelated to the stack-based
// single-pass builder.
// ---------------------------------------------------------------------------

enum Hit {
    Close(usize),
    Open(usize),
}

fn oracle_level(
    raw: &[u8],
    mut pos: usize,
    close: Option<&[u8]>,
    depth: usize,
    spec: &DelimiterSpec,
) -> (Vec<StructuredNode>, usize, bool) {
    let mut children = Vec::new();
    loop {
        let hit = (pos..raw.len()).find_map(|j| {
            let rest = &raw[j..];
            if let Some(c) = close {
                if rest.starts_with(c) {
                    return Some((j, Hit::Close(c.len())));
                }
            }
            if depth < MAX_DEPTH {
                for (k, r) in spec.rules().iter().enumerate() {
                    if rest.starts_with(&r.open) {
                        return Some((j, Hit::Open(k)));
                    }
                }
            }
            None
        });
        let text_end = hit.as_ref().map_or(raw.len(), |(j, _)| *j);
        if text_end > pos {
            children.push(StructuredNode::Text(raw[pos..text_end].to_vec()));
        }
        match hit {
            None => return (children, raw.len(), false),
            Some((j, Hit::Close(len))) => return (children, j + len, true),
            Some((j, Hit::Open(k))) => {
                let rule = &spec.rules()[k];
                let (kids, next, terminated) =
                    oracle_level(raw, j + rule.open.len(), Some(&rule.close), depth + 1, spec);
                children.push(StructuredNode::Element(Element {
                    name: rule.element_name.clone(),
                    unterminated: !terminated,
                    children: kids,
                }));
                if !terminated {
                    return (children, next, false);
                }
                pos = next;
            }
        }
    }
}

pub fn oracle_build(raw: &[u8], spec: &DelimiterSpec) -> StructuredDocument {
    let (children, _, _) = oracle_level(raw, 0, None, 0, spec);
    StructuredDocument {
        root: Element {
            name: ROOT_NAME.to_string(),
            unterminated: false,
            children,
        },
    }
}

/// Reference for strip_delimiters: Text bytes of the reference tree in
/// document order.
pub fn oracle_strip(raw: &[u8], spec: &DelimiterSpec) -> Vec<u8> {
    fn walk(nodes: &[StructuredNode], out: &mut Vec<u8>) {
        for n in nodes {
            match n {
                StructuredNode::Text(t) => out.extend_from_slice(t),
                StructuredNode::Element(e) => walk(&e.children, out),
            }
        }
    }
    let mut out = Vec::new();
    walk(&oracle_build(raw, spec).root.children, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Live harness
// ---------------------------------------------------------------------------

pub struct ProxyHarness {
    pub addr: String,
    pub events: mpsc::UnboundedReceiver<ProxyEvent>,
    pub dir: tempfile::TempDir,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl ProxyHarness {
    pub async fn start(upstream: &str) -> Self {
        Self::start_with(upstream, |_| {}).await
    }

    pub async fn start_with(upstream: &str, tweak: impl FnOnce(&mut ProxyConfig)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ProxyConfig::new("127.0.0.1:0", upstream, dir.path());
        tweak(&mut config);
        let proxy = Proxy::bind(config).await.unwrap();
        let addr = proxy.local_addr().unwrap().to_string();
        let (tx, events) = mpsc::unbounded_channel();
        let (stop, stop_rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            proxy
                .run(tx, async {
                    let _ = stop_rx.await;
                })
                .await
                .unwrap();
        });
        ProxyHarness {
            addr,
            events,
            dir,
            stop: Some(stop),
            task,
        }
    }

    pub async fn next_event(&mut self) -> ProxyEvent {
        tokio::time::timeout(Duration::from_secs(20), self.events.recv())
            .await
            .expect("proxy event within 20 s")
            .expect("proxy still running")
    }

    pub fn capture_files(&self) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(self.dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        v.sort();
        v
    }

    /// Stops the proxy and hands back the remaining events and the capture
    /// directory.
    pub async fn stop(mut self) -> (mpsc::UnboundedReceiver<ProxyEvent>, tempfile::TempDir) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        let _ = (&mut self.task).await;
        (self.events, self.dir)
    }
}

pub async fn start_mock() -> MockServer {
    MockServer::start("127.0.0.1:0", MockDataset::fixture()).await.unwrap()
}

pub fn golden_commands() -> Vec<String> {
    vec!["AUTH demo demo-pass".to_string(), "GET contacts".to_string()]
}

/// Writes `chunks` one `write_all` at a time, then half-closes.
async fn write_chunks(mut w: tokio::net::tcp::OwnedWriteHalf, chunks: Vec<Vec<u8>>) {
    for c in chunks {
        w.write_all(&c).await.unwrap();
    }
    w.shutdown().await.unwrap();
}

async fn read_all(mut r: tokio::net::tcp::OwnedReadHalf) -> Vec<u8> {
    let mut out = Vec::new();
    r.read_to_end(&mut out).await.unwrap();
    out
}

pub struct FuzzResult {
    pub client_sent: Vec<u8>,
    pub server_sent: Vec<u8>,
    pub client_received: Vec<u8>,
    pub server_received: Vec<u8>,
}

/// One session through the proxy: both endpoints write their chunks
/// concurrently, half-close, and read until the peer's close.
pub async fn fuzz_session(
    proxy_addr: &str,
    upstream: &tokio::net::TcpListener,
    client_chunks: Vec<Vec<u8>>,
    server_chunks: Vec<Vec<u8>>,
) -> FuzzResult {
    let client_sent = client_chunks.concat();
    let server_sent = server_chunks.concat();
    let client = async {
        let stream = TcpStream::connect(proxy_addr).await.unwrap();
        let (r, w) = stream.into_split();
        let (_, got) = tokio::join!(write_chunks(w, client_chunks), read_all(r));
        got
    };
    let server = async {
        let (stream, _) = upstream.accept().await.unwrap();
        let (r, w) = stream.into_split();
        let (_, got) = tokio::join!(write_chunks(w, server_chunks), read_all(r));
        got
    };
    let (client_received, server_received) = tokio::time::timeout(Duration::from_secs(30), async {
        tokio::join!(client, server)
    })
    .await
    .expect("fuzz session finished");
    FuzzResult {
        client_sent,
        server_sent,
        client_received,
        server_received,
    }
}

/// 1..=max_packets chunks of 1..=max_len random bytes each.
pub fn random_chunks(rng: &mut impl Rng, max_packets: usize, max_len: usize) -> Vec<Vec<u8>> {
    let n = rng.random_range(1..=max_packets);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            let mut v = vec![0u8; len];
            rng.fill(&mut v[..]);
            v
        })
        .collect()
}
