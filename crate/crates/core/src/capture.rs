//! Packet/session model and the HYC1 capture file format.
//!
//! A capture file is a fixed 34-byte header followed by `record_count`
//! packet records. All integers are big-endian.
//!
//! ```text
//! header: "HYC1" | version u16 | session_id [16] | opened_us u64 | record_count u32
//! record: seq u64 | timestamp_us u64 | direction u8 | payload_len u32 | payload
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"HYC1";
pub const FORMAT_VERSION: u16 = 1;
/// Largest payload a single record may carry.
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

pub const HEADER_LEN: usize = 4 + 2 + 16 + 8 + 4;
pub const RECORD_HEADER_LEN: usize = 8 + 8 + 1 + 4;
/// Offset of the `record_count` field inside the header.
pub const RECORD_COUNT_OFFSET: usize = HEADER_LEN - 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CaptureError {
    #[error("payload of packet {seq} is {len} bytes, limit is {MAX_PAYLOAD}")]
    PayloadTooLarge { seq: u64, len: usize },
    #[error("packet {seq} has an empty payload")]
    EmptyPayload { seq: u64 },
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported version {version} at offset {offset}")]
    UnsupportedVersion { offset: usize, version: u16 },
    #[error("truncated record at offset {offset}")]
    TruncatedRecord { offset: usize },
    #[error("sequence gap at offset {offset}: expected seq {expected}, found {found}")]
    SeqGap {
        offset: usize,
        expected: u64,
        found: u64,
    },
    #[error("invalid direction byte {value:#04x} at offset {offset}")]
    BadDirection { offset: usize, value: u8 },
    #[error("{count} trailing bytes after last record at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
}

/// Which way a payload travelled through the proxy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

impl Direction {
    pub fn code(self) -> u8 {
        match self {
            Direction::ClientToServer => 0,
            Direction::ServerToClient => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Direction::ClientToServer),
            1 => Some(Direction::ServerToClient),
            _ => None,
        }
    }

    /// Short label used in NDJSON output and on the command line.
    pub fn label(self) -> &'static str {
        match self {
            Direction::ClientToServer => "c2s",
            Direction::ServerToClient => "s2c",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "c2s" => Some(Direction::ClientToServer),
            "s2c" => Some(Direction::ServerToClient),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// 16-byte random session identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SessionId(pub [u8; 16]);

impl SessionId {
    pub fn random() -> Self {
        SessionId(rand::random())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut id = [0u8; 16];
        hex::decode_to_slice(s, &mut id).ok()?;
        Some(SessionId(id))
    }
}

impl fmt::Debug for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionId({})", self.to_hex())
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// One relay read: a non-empty payload tagged with direction and position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub seq: u64,
    pub timestamp_us: u64,
    pub direction: Direction,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub session_id: SessionId,
    pub opened_us: u64,
    pub peer_client: String,
    pub peer_server: String,
    pub packets: Vec<Packet>,
}

impl Session {
    pub fn new(session_id: SessionId, opened_us: u64) -> Self {
        Session {
            session_id,
            opened_us,
            peer_client: String::new(),
            peer_server: String::new(),
            packets: Vec::new(),
        }
    }

    /// Checks the seq ordering and payload bounds.
    pub fn validate(&self) -> Result<(), CaptureError> {
        for (i, p) in self.packets.iter().enumerate() {
            if p.seq != i as u64 {
                return Err(CaptureError::SeqGap {
                    offset: i,
                    expected: i as u64,
                    found: p.seq,
                });
            }
            check_payload(p.seq, p.payload.len())?;
        }
        Ok(())
    }

    pub fn stream(&self, direction: Direction) -> impl Iterator<Item = &Packet> {
        self.packets.iter().filter(move |p| p.direction == direction)
    }

    pub fn client_stream(&self) -> impl Iterator<Item = &Packet> {
        self.stream(Direction::ClientToServer)
    }

    pub fn server_stream(&self) -> impl Iterator<Item = &Packet> {
        self.stream(Direction::ServerToClient)
    }

    pub fn total_payload_bytes(&self) -> usize {
        self.packets.iter().map(|p| p.payload.len()).sum()
    }
}

fn check_payload(seq: u64, len: usize) -> Result<(), CaptureError> {
    if len == 0 {
        Err(CaptureError::EmptyPayload { seq })
    } else if len > MAX_PAYLOAD {
        Err(CaptureError::PayloadTooLarge { seq, len })
    } else {
        Ok(())
    }
}

/// Concatenated payloads of one direction, in seq order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawData {
    pub bytes: Vec<u8>,
}

impl RawData {
    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

impl From<Vec<u8>> for RawData {
    fn from(bytes: Vec<u8>) -> Self {
        RawData { bytes }
    }
}

impl AsRef<[u8]> for RawData {
    fn as_ref(&self) -> &[u8] {
        &self.bytes
    }
}

pub fn concat_raw(session: &Session, direction: Direction) -> RawData {
    let bytes = session
        .stream(direction)
        .flat_map(|p| p.payload.iter().copied())
        .collect();
    RawData { bytes }
}

pub fn now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

/// Assembles a [`Session`] from packets arriving from both relay directions.
///
/// `record` hands out seq numbers from one counter, so the resulting order is
/// total across directions. `insert` accepts packets that already carry a
/// seq; the finished session is the same regardless of insertion order.
#[derive(Debug)]
pub struct SessionBuilder {
    session_id: SessionId,
    opened_us: u64,
    peer_client: String,
    peer_server: String,
    next_seq: u64,
    packets: BTreeMap<u64, Packet>,
}

impl SessionBuilder {
    pub fn new(session_id: SessionId, opened_us: u64) -> Self {
        SessionBuilder {
            session_id,
            opened_us,
            peer_client: String::new(),
            peer_server: String::new(),
            next_seq: 0,
            packets: BTreeMap::new(),
        }
    }

    pub fn peers(mut self, client: impl Into<String>, server: impl Into<String>) -> Self {
        self.peer_client = client.into();
        self.peer_server = server.into();
        self
    }

    pub fn session_id(&self) -> SessionId {
        self.session_id
    }

    /// Assigns the next seq and stores the packet. Returns the stored packet.
    pub fn record(
        &mut self,
        direction: Direction,
        timestamp_us: u64,
        payload: Vec<u8>,
    ) -> Result<&Packet, CaptureError> {
        let seq = self.next_seq;
        check_payload(seq, payload.len())?;
        self.next_seq += 1;
        let packet = Packet {
            seq,
            timestamp_us,
            direction,
            payload,
        };
        Ok(self.packets.entry(seq).or_insert(packet))
    }

    pub fn insert(&mut self, packet: Packet) -> Result<(), CaptureError> {
        check_payload(packet.seq, packet.payload.len())?;
        self.next_seq = self.next_seq.max(packet.seq + 1);
        self.packets.insert(packet.seq, packet);
        Ok(())
    }

    pub fn finish(self) -> Result<Session, CaptureError> {
        let session = Session {
            session_id: self.session_id,
            opened_us: self.opened_us,
            peer_client: self.peer_client,
            peer_server: self.peer_server,
            packets: self.packets.into_values().collect(),
        };
        session.validate()?;
        Ok(session)
    }
}

pub fn encode_header(session_id: SessionId, opened_us: u64, record_count: u32) -> [u8; HEADER_LEN] {
    let mut out = [0u8; HEADER_LEN];
    out[0..4].copy_from_slice(&MAGIC);
    out[4..6].copy_from_slice(&FORMAT_VERSION.to_be_bytes());
    out[6..22].copy_from_slice(&session_id.0);
    out[22..30].copy_from_slice(&opened_us.to_be_bytes());
    out[30..34].copy_from_slice(&record_count.to_be_bytes());
    out
}

pub fn encode_record(packet: &Packet, out: &mut Vec<u8>) -> Result<(), CaptureError> {
    check_payload(packet.seq, packet.payload.len())?;
    out.reserve(RECORD_HEADER_LEN + packet.payload.len());
    out.extend_from_slice(&packet.seq.to_be_bytes());
    out.extend_from_slice(&packet.timestamp_us.to_be_bytes());
    out.push(packet.direction.code());
    out.extend_from_slice(&(packet.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&packet.payload);
    Ok(())
}

/// Serializes a session as HYC1. Peer addresses are not part of the format.
pub fn encode_capture(session: &Session) -> Result<Vec<u8>, CaptureError> {
    session.validate()?;
    let count = u32::try_from(session.packets.len()).expect("record count exceeds u32");
    let mut out = Vec::with_capacity(
        HEADER_LEN
            + session
                .packets
                .iter()
                .map(|p| RECORD_HEADER_LEN + p.payload.len())
                .sum::<usize>(),
    );
    out.extend_from_slice(&encode_header(session.session_id, session.opened_us, count));
    for p in &session.packets {
        encode_record(p, &mut out)?;
    }
    Ok(out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, err_offset: usize) -> Result<&'a [u8], CaptureError> {
        if self.data.len() - self.pos < n {
            return Err(CaptureError::TruncatedRecord { offset: err_offset });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, err_offset: usize) -> Result<u64, CaptureError> {
        Ok(u64::from_be_bytes(self.take(8, err_offset)?.try_into().unwrap()))
    }

    fn u32(&mut self, err_offset: usize) -> Result<u32, CaptureError> {
        Ok(u32::from_be_bytes(self.take(4, err_offset)?.try_into().unwrap()))
    }
}

/// Parses a HYC1 file. Every error names the offset where parsing failed.
pub fn decode_capture(data: &[u8]) -> Result<Session, CaptureError> {
    if data.len() < 4 || data[0..4] != MAGIC {
        return Err(CaptureError::BadMagic { offset: 0 });
    }
    let mut r = Reader { data, pos: 4 };
    let version = u16::from_be_bytes(r.take(2, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CaptureError::UnsupportedVersion { offset: 4, version });
    }
    let session_id = SessionId(r.take(16, 6)?.try_into().unwrap());
    let opened_us = r.u64(22)?;
    let count = r.u32(30)?;

    let mut session = Session::new(session_id, opened_us);
    session.packets.reserve(count.min(1 << 16) as usize);
    for expected in 0..u64::from(count) {
        let start = r.pos;
        let seq = r.u64(start)?;
        let timestamp_us = r.u64(start)?;
        let dir_byte = r.take(1, start)?[0];
        let len = r.u32(start)? as usize;
        if seq != expected {
            return Err(CaptureError::SeqGap {
                offset: start,
                expected,
                found: seq,
            });
        }
        let direction = Direction::from_code(dir_byte).ok_or(CaptureError::BadDirection {
            offset: start + 16,
            value: dir_byte,
        })?;
        if len == 0 {
            return Err(CaptureError::EmptyPayload { seq });
        }
        if len > MAX_PAYLOAD {
            return Err(CaptureError::PayloadTooLarge { seq, len });
        }
        let payload = r.take(len, start)?.to_vec();
        session.packets.push(Packet {
            seq,
            timestamp_us,
            direction,
            payload,
        });
    }
    if r.pos != data.len() {
        return Err(CaptureError::TrailingBytes {
            offset: r.pos,
            count: data.len() - r.pos,
        });
    }
    Ok(session)
}

#[derive(Serialize)]
struct PacketLine<'a> {
    seq: u64,
    ts_us: u64,
    dir: &'static str,
    payload_hex: &'a str,
}

/// One JSON object per packet, newline-terminated.
pub fn export_ndjson(session: &Session) -> String {
    let mut out = String::new();
    for p in &session.packets {
        let payload_hex = hex::encode(&p.payload);
        let line = PacketLine {
            seq: p.seq,
            ts_us: p.timestamp_us,
            dir: p.direction.label(),
            payload_hex: &payload_hex,
        };
        out.push_str(&serde_json::to_string(&line).expect("serializable"));
        out.push('\n');
    }
    out
}
