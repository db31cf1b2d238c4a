//! The interposed relay: accepts a client, dials the upstream server, relays
//! both directions unchanged and tees every read into a HYC1 capture file.

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex as StdMutex};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;
use tokio::fs::File;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncSeekExt, AsyncWrite, AsyncWriteExt, BufWriter};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch, Mutex, Semaphore};
use tokio::task::JoinSet;
use tokio::time::Instant;

use crate::capture::{
    encode_header, encode_record, now_us, Direction, Packet, SessionId, RECORD_COUNT_OFFSET,
};
use crate::sniff::{sniff_packets, CredentialHit, SniffRuleSet};

/// Bytes requested per relay read; well below the per-record cap.
pub const RELAY_CHUNK: usize = 64 * 1024;
const CONNECT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("invalid proxy configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot listen on {addr}: {source}")]
    BindFailed { addr: String, source: io::Error },
    #[error("cannot reach upstream {addr}: {source}")]
    UpstreamConnectFailed { addr: String, source: io::Error },
    #[error("cannot write capture {}: {source}", path.display())]
    CaptureWriteFailed { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub listen_addr: String,
    pub upstream_addr: String,
    /// Directory receiving one `<session_id-hex>.hyc` per session.
    pub capture_dir: PathBuf,
    pub sniff_rules: SniffRuleSet,
    pub max_sessions: usize,
    pub idle_timeout: Duration,
}

impl ProxyConfig {
    pub fn new(
        listen_addr: impl Into<String>,
        upstream_addr: impl Into<String>,
        capture_dir: impl Into<PathBuf>,
    ) -> Self {
        ProxyConfig {
            listen_addr: listen_addr.into(),
            upstream_addr: upstream_addr.into(),
            capture_dir: capture_dir.into(),
            sniff_rules: SniffRuleSet::default(),
            max_sessions: 64,
            idle_timeout: Duration::from_secs(300),
        }
    }

    pub fn validate(&self) -> Result<(), ProxyError> {
        let invalid = |m: &str| Err(ProxyError::InvalidConfig(m.to_string()));
        if self.listen_addr == self.upstream_addr {
            return invalid("listen and upstream addresses must differ");
        }
        if self.max_sessions == 0 {
            return invalid("max_sessions must be positive");
        }
        if self.idle_timeout.is_zero() {
            return invalid("idle timeout must be positive");
        }
        self.sniff_rules
            .validate()
            .map_err(|e| ProxyError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct SessionSummary {
    pub session_id: SessionId,
    pub peer_client: String,
    pub capture_path: PathBuf,
    pub c2s_bytes: u64,
    pub s2c_bytes: u64,
    pub hits: Vec<CredentialHit>,
}

#[derive(Serialize)]
struct HitLine<'a> {
    seq: u64,
    username: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    secret: Option<&'a str>,
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    session_id: String,
    c2s_bytes: u64,
    s2c_bytes: u64,
    hits: Vec<HitLine<'a>>,
}

impl SessionSummary {
    /// One NDJSON line (no trailing newline). Secrets are omitted unless
    /// `show_secrets` is set.
    pub fn to_ndjson(&self, show_secrets: bool) -> String {
        let line = SummaryLine {
            session_id: self.session_id.to_hex(),
            c2s_bytes: self.c2s_bytes,
            s2c_bytes: self.s2c_bytes,
            hits: self
                .hits
                .iter()
                .map(|h| HitLine {
                    seq: h.packet_seq,
                    username: &h.username,
                    secret: show_secrets.then_some(h.secret.as_str()),
                })
                .collect(),
        };
        serde_json::to_string(&line).expect("serializable")
    }
}

pub fn capture_file_name(id: SessionId) -> String {
    format!("{}.hyc", id.to_hex())
}

/// HYC1 file written record by record. The header's record count is patched
/// on `finish`; until then the data lives under a `.part` name.
struct CaptureWriter {
    file: BufWriter<File>,
    part_path: PathBuf,
    final_path: PathBuf,
    records: u32,
}

impl CaptureWriter {
    async fn create(dir: &Path, id: SessionId, opened_us: u64) -> io::Result<Self> {
        let final_path = dir.join(capture_file_name(id));
        let part_path = dir.join(format!("{}.part", capture_file_name(id)));
        let mut file = BufWriter::new(File::create(&part_path).await?);
        if let Err(e) = file.write_all(&encode_header(id, opened_us, 0)).await {
            let _ = tokio::fs::remove_file(&part_path).await;
            return Err(e);
        }
        Ok(CaptureWriter {
            file,
            part_path,
            final_path,
            records: 0,
        })
    }

    async fn append(&mut self, packet: &Packet) -> io::Result<()> {
        let mut rec = Vec::new();
        encode_record(packet, &mut rec).map_err(io::Error::other)?;
        self.file.write_all(&rec).await?;
        self.records += 1;
        Ok(())
    }

    async fn finish(mut self) -> io::Result<PathBuf> {
        self.file.flush().await?;
        let mut file = self.file.into_inner();
        file.seek(io::SeekFrom::Start(RECORD_COUNT_OFFSET as u64)).await?;
        file.write_all(&self.records.to_be_bytes()).await?;
        file.sync_all().await?;
        drop(file);
        tokio::fs::rename(&self.part_path, &self.final_path).await?;
        Ok(self.final_path)
    }

    async fn discard(self) {
        let part = self.part_path.clone();
        drop(self);
        let _ = tokio::fs::remove_file(part).await;
    }
}

/// Single-writer append point shared by both relay directions.
struct Recorder {
    session_id: SessionId,
    writer: CaptureWriter,
    next_seq: u64,
    bytes: [u64; 2],
    client_packets: usize,
    sniff_window: Vec<Packet>,
    window_len: usize,
}

impl Recorder {
    async fn record(&mut self, direction: Direction, payload: &[u8]) -> io::Result<()> {
        let packet = Packet {
            seq: self.next_seq,
            timestamp_us: now_us(),
            direction,
            payload: payload.to_vec(),
        };
        self.writer.append(&packet).await?;
        self.next_seq += 1;
        self.bytes[direction.code() as usize] += payload.len() as u64;
        if direction == Direction::ClientToServer {
            self.client_packets += 1;
            if self.client_packets <= self.window_len {
                self.sniff_window.push(packet);
            }
        }
        Ok(())
    }
}

enum RelayError {
    Capture(io::Error),
    Socket(io::Error),
}

async fn relay<R, W>(
    mut src: R,
    mut dst: W,
    direction: Direction,
    recorder: &Mutex<Recorder>,
    activity: &StdMutex<Instant>,
) -> Result<(), RelayError>
where
    R: AsyncRead + Unpin,
    W: AsyncWrite + Unpin,
{
    let mut buf = vec![0u8; RELAY_CHUNK];
    loop {
        let n = src.read(&mut buf).await.map_err(RelayError::Socket)?;
        if n == 0 {
            // propagate the half-close
            let _ = dst.shutdown().await;
            return Ok(());
        }
        *activity.lock().expect("activity lock") = Instant::now();
        recorder
            .lock()
            .await
            .record(direction, &buf[..n])
            .await
            .map_err(RelayError::Capture)?;
        dst.write_all(&buf[..n]).await.map_err(RelayError::Socket)?;
    }
}

async fn idle_watchdog(activity: &StdMutex<Instant>, idle: Duration) {
    loop {
        let last = *activity.lock().expect("activity lock");
        if last.elapsed() >= idle {
            return;
        }
        tokio::time::sleep_until(last + idle).await;
    }
}

async fn handle_session(
    client: TcpStream,
    peer: SocketAddr,
    config: Arc<ProxyConfig>,
    mut shutdown: watch::Receiver<bool>,
) -> Result<SessionSummary, ProxyError> {
    let upstream_failed = |source| ProxyError::UpstreamConnectFailed {
        addr: config.upstream_addr.clone(),
        source,
    };
    let upstream = tokio::time::timeout(CONNECT_TIMEOUT, TcpStream::connect(&config.upstream_addr))
        .await
        .map_err(|_| upstream_failed(io::ErrorKind::TimedOut.into()))?
        .map_err(upstream_failed)?;
    let _ = client.set_nodelay(true);
    let _ = upstream.set_nodelay(true);

    let session_id = SessionId::random();
    let writer = CaptureWriter::create(&config.capture_dir, session_id, now_us())
        .await
        .map_err(|source| ProxyError::CaptureWriteFailed {
            path: config.capture_dir.join(capture_file_name(session_id)),
            source,
        })?;
    tracing::info!(%peer, session = %session_id, "session opened");

    let recorder = Mutex::new(Recorder {
        session_id,
        writer,
        next_seq: 0,
        bytes: [0; 2],
        client_packets: 0,
        sniff_window: Vec::new(),
        window_len: config.sniff_rules.max_client_packets,
    });
    let activity = StdMutex::new(Instant::now());

    let (client_r, client_w) = client.into_split();
    let (upstream_r, upstream_w) = upstream.into_split();
    let both = async {
        tokio::try_join!(
            relay(client_r, upstream_w, Direction::ClientToServer, &recorder, &activity),
            relay(upstream_r, client_w, Direction::ServerToClient, &recorder, &activity),
        )
    };
    let outcome = tokio::select! {
        r = both => r,
        _ = idle_watchdog(&activity, config.idle_timeout) => {
            tracing::info!(session = %session_id, "idle timeout");
            Ok(((), ()))
        }
        _ = shutdown.wait_for(|stop| *stop) => Ok(((), ())),
    };

    let rec = recorder.into_inner();
    match outcome {
        Err(RelayError::Capture(source)) => {
            let path = rec.writer.final_path.clone();
            rec.writer.discard().await;
            return Err(ProxyError::CaptureWriteFailed { path, source });
        }
        Err(RelayError::Socket(e)) => {
            tracing::warn!(session = %session_id, error = %e, "relay ended with socket error");
        }
        Ok(_) => {}
    }
    let hits = sniff_packets(rec.session_id, &rec.sniff_window, &config.sniff_rules);
    let final_path = rec.writer.final_path.clone();
    let capture_path = match rec.writer.finish().await {
        Ok(p) => p,
        Err(source) => {
            let part = final_path.with_extension("hyc.part");
            let _ = tokio::fs::remove_file(&part).await;
            let _ = tokio::fs::remove_file(&final_path).await;
            return Err(ProxyError::CaptureWriteFailed {
                path: final_path,
                source,
            });
        }
    };
    Ok(SessionSummary {
        session_id,
        peer_client: peer.to_string(),
        capture_path,
        c2s_bytes: rec.bytes[0],
        s2c_bytes: rec.bytes[1],
        hits,
    })
}

pub type ProxyEvent = Result<SessionSummary, ProxyError>;

/// A bound proxy listener.
pub struct Proxy {
    listener: TcpListener,
    config: Arc<ProxyConfig>,
}

impl Proxy {
    pub async fn bind(config: ProxyConfig) -> Result<Self, ProxyError> {
        config.validate()?;
        let listener = TcpListener::bind(&config.listen_addr)
            .await
            .map_err(|source| ProxyError::BindFailed {
                addr: config.listen_addr.clone(),
                source,
            })?;
        Ok(Proxy {
            listener,
            config: Arc::new(config),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts clients until `shutdown` resolves, then stops open sessions,
    /// finalizes their captures and returns. One event is sent per accepted
    /// connection.
    pub async fn run(
        self,
        events: mpsc::UnboundedSender<ProxyEvent>,
        shutdown: impl Future<Output = ()>,
    ) -> Result<(), ProxyError> {
        let limit = Arc::new(Semaphore::new(self.config.max_sessions));
        let (stop_tx, stop_rx) = watch::channel(false);
        let mut sessions = JoinSet::new();
        tokio::pin!(shutdown);
        loop {
            let permit = tokio::select! {
                _ = &mut shutdown => break,
                p = Arc::clone(&limit).acquire_owned() => p.expect("semaphore never closed"),
            };
            let (client, peer) = tokio::select! {
                _ = &mut shutdown => break,
                accepted = self.listener.accept() => match accepted {
                    Ok(a) => a,
                    Err(e) => {
                        tracing::warn!(error = %e, "accept failed");
                        continue;
                    }
                },
            };
            let config = Arc::clone(&self.config);
            let events = events.clone();
            let stop = stop_rx.clone();
            sessions.spawn(async move {
                let result = handle_session(client, peer, config, stop).await;
                let _ = events.send(result);
                drop(permit);
            });
            while sessions.try_join_next().is_some() {}
        }
        let _ = stop_tx.send(true);
        while sessions.join_next().await.is_some() {}
        Ok(())
    }
}

pub async fn run_proxy(
    config: ProxyConfig,
    events: mpsc::UnboundedSender<ProxyEvent>,
    shutdown: impl Future<Output = ()>,
) -> Result<(), ProxyError> {
    Proxy::bind(config).await?.run(events, shutdown).await
}
