//! Plaintext credential sniffing over the first client packets of a session.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::capture::{Direction, Packet, Session, SessionId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SniffRuleSet {
    pub max_client_packets: usize,
    pub token_separators: BTreeSet<u8>,
    pub auth_markers: Vec<Vec<u8>>,
}

impl Default for SniffRuleSet {
    fn default() -> Self {
        SniffRuleSet {
            max_client_packets: 4,
            token_separators: [0x20, 0x0A, 0x1F].into_iter().collect(),
            auth_markers: vec![b"AUTH ".to_vec()],
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RulesError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("max_client_packets must be at least 1")]
    ZeroWindow,
    #[error("at least one non-empty auth marker is required")]
    NoMarkers,
}

impl SniffRuleSet {
    pub fn validate(&self) -> Result<(), RulesError> {
        if self.max_client_packets == 0 {
            return Err(RulesError::ZeroWindow);
        }
        if self.auth_markers.is_empty() || self.auth_markers.iter().any(Vec::is_empty) {
            return Err(RulesError::NoMarkers);
        }
        Ok(())
    }

    /// Parses a rules file. Directives, one per line, `#` starts a comment:
    ///
    /// ```text
    /// max_client_packets 4
    /// separators 20 0a 1f
    /// marker 4155544820
    /// ```
    ///
    /// Directives that are absent keep their default; `separators` and
    /// `marker` replace the defaults on first use.
    pub fn parse(text: &str) -> Result<Self, RulesError> {
        let mut rules = SniffRuleSet::default();
        let mut seps: Option<BTreeSet<u8>> = None;
        let mut markers: Option<Vec<Vec<u8>>> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: &str| RulesError::Syntax {
                line: line_no,
                msg: msg.to_string(),
            };
            let mut words = line.split_whitespace();
            let directive = words.next().unwrap_or_default();
            let args: Vec<&str> = words.collect();
            match directive {
                "max_client_packets" => {
                    let [n] = args[..] else {
                        return Err(syntax("expected one integer"));
                    };
                    rules.max_client_packets =
                        n.parse().map_err(|_| syntax("invalid integer"))?;
                }
                "separators" => {
                    let set = seps.get_or_insert_with(BTreeSet::new);
                    for a in args {
                        let b = hex::decode(a).map_err(|_| syntax("invalid hex byte"))?;
                        let [byte] = b[..] else {
                            return Err(syntax("separators are single bytes"));
                        };
                        set.insert(byte);
                    }
                }
                "marker" => {
                    let [h] = args[..] else {
                        return Err(syntax("expected one hex string"));
                    };
                    let m = hex::decode(h).map_err(|_| syntax("invalid hex"))?;
                    markers.get_or_insert_with(Vec::new).push(m);
                }
                other => return Err(syntax(&format!("unknown directive `{other}`"))),
            }
        }
        if let Some(s) = seps {
            rules.token_separators = s;
        }
        if let Some(m) = markers {
            rules.auth_markers = m;
        }
        rules.validate()?;
        Ok(rules)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CredentialHit {
    pub session_id: SessionId,
    pub packet_seq: u64,
    pub username: String,
    pub secret: String,
    pub marker: Vec<u8>,
}

fn is_printable_token(t: &[u8]) -> bool {
    !t.is_empty() && t.iter().all(|b| (0x21..=0x7E).contains(b))
}

/// Extracts `(username, secret)` from one payload if it starts with a marker.
pub fn parse_auth_payload<'a>(
    payload: &'a [u8],
    rules: &'a SniffRuleSet,
) -> Option<(&'a [u8], &'a [u8], &'a [u8])> {
    let marker = rules
        .auth_markers
        .iter()
        .find(|m| !m.is_empty() && payload.starts_with(m))?;
    let mut tokens = payload[marker.len()..]
        .split(|b| rules.token_separators.contains(b))
        .filter(|t| is_printable_token(t));
    let user = tokens.next()?;
    let secret = tokens.next()?;
    Some((marker.as_slice(), user, secret))
}

/// Scans packets in seq order; only the first `max_client_packets`
/// client-to-server packets are considered.
pub fn sniff_packets<'a>(
    session_id: SessionId,
    packets: impl IntoIterator<Item = &'a Packet>,
    rules: &SniffRuleSet,
) -> Vec<CredentialHit> {
    packets
        .into_iter()
        .filter(|p| p.direction == Direction::ClientToServer)
        .take(rules.max_client_packets)
        .filter_map(|p| {
            let (marker, user, secret) = parse_auth_payload(&p.payload, rules)?;
            Some(CredentialHit {
                session_id,
                packet_seq: p.seq,
                // tokens are 0x21..=0x7E, so always valid UTF-8
                username: String::from_utf8_lossy(user).into_owned(),
                secret: String::from_utf8_lossy(secret).into_owned(),
                marker: marker.to_vec(),
            })
        })
        .collect()
}

pub fn sniff_credentials(session: &Session, rules: &SniffRuleSet) -> Vec<CredentialHit> {
    sniff_packets(session.session_id, &session.packets, rules)
}
