use std::time::Duration;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

use crate::capture::{now_us, Direction, Session, SessionBuilder, SessionId};
use crate::mock::REPLY_TERMINATORS;

use super::{ReplayError, ReplayScript, Substitution};

const READ_CHUNK: usize = 64 * 1024;

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    /// A reply is considered complete when its last received byte is one
    /// of these.
    pub terminators: Vec<u8>,
    pub connect_timeout: Duration,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            terminators: REPLY_TERMINATORS.to_vec(),
            connect_timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub session: Session,
    /// Steps whose reply did not complete within their timeout.
    pub timed_out_steps: Vec<usize>,
    /// Step during which the server closed the connection, if it did.
    pub server_closed_at: Option<usize>,
}

impl ReplayOutcome {
    pub fn is_complete(&self) -> bool {
        self.timed_out_steps.is_empty()
    }
}

/// Drives `server_addr` with the rendered script, one step at a time, and
/// records everything sent and received as a fresh session.
///
/// All placeholders are rendered before connecting. Reply timeouts do not
/// abort the replay; they are reported in the outcome.
pub async fn run_replay(
    script: &ReplayScript,
    bindings: &[Substitution],
    server_addr: &str,
    options: &ReplayOptions,
) -> Result<ReplayOutcome, ReplayError> {
    let payloads = script.render_all(bindings)?;

    let connect_failed = |source| ReplayError::ConnectFailed {
        addr: server_addr.to_string(),
        source,
    };
    let mut stream = tokio::time::timeout(options.connect_timeout, TcpStream::connect(server_addr))
        .await
        .map_err(|_| connect_failed(std::io::ErrorKind::TimedOut.into()))?
        .map_err(connect_failed)?;
    let local = stream.local_addr().map(|a| a.to_string()).unwrap_or_default();

    let mut builder = SessionBuilder::new(SessionId::random(), now_us()).peers(local, server_addr);
    let mut timed_out_steps = Vec::new();
    let mut server_closed_at = None;
    let mut buf = vec![0u8; READ_CHUNK];

    'steps: for (index, (step, payload)) in script.steps.iter().zip(payloads).enumerate() {
        if !payload.is_empty() {
            stream.write_all(&payload).await?;
            builder
                .record(Direction::ClientToServer, now_us(), payload)
                .expect("rendered payloads are bounded by the capture cap");
        }
        if !step.expect_reply {
            continue;
        }
        let deadline = tokio::time::Instant::now() + Duration::from_millis(step.reply_timeout_ms);
        loop {
            match tokio::time::timeout_at(deadline, stream.read(&mut buf)).await {
                Err(_) => {
                    timed_out_steps.push(index);
                    break;
                }
                Ok(Ok(0)) => {
                    server_closed_at = Some(index);
                    break 'steps;
                }
                Ok(Ok(n)) => {
                    builder
                        .record(Direction::ServerToClient, now_us(), buf[..n].to_vec())
                        .expect("reads are bounded by the chunk size");
                    if options.terminators.contains(&buf[n - 1]) {
                        break;
                    }
                }
                Ok(Err(e)) => return Err(e.into()),
            }
        }
    }
    if server_closed_at.is_none() {
        let _ = stream.shutdown().await;
    }
    let session = builder.finish().expect("builder assigns contiguous seqs");
    Ok(ReplayOutcome {
        session,
        timed_out_steps,
        server_closed_at,
    })
}
