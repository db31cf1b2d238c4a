//! Capture proxy and protocol-extraction toolkit for plaintext client/server
//! database protocols.
//!
//! * [`proxy`] relays a client to its server and records every read into a
//!   HYC1 capture ([`capture`]), sniffing plaintext logins on the way
//!   ([`sniff`]).
//! * [`replay`] turns a capture into a script and drives a server with it,
//!   optionally with substituted values.
//! * [`cleanse`] converts captured bytes into XML using known introduction
//!   and termination byte sequences.
//! * [`mock`] is a deterministic HDP/0 server and client for testing the
//!   whole pipeline.

pub mod capture;
pub mod cleanse;
pub mod mock;
pub mod proxy;
pub mod replay;
pub mod sniff;

pub use capture::{
    concat_raw, decode_capture, encode_capture, CaptureError, Direction, Packet, RawData, Session,
    SessionBuilder, SessionId,
};
pub use cleanse::{
    build_structure, from_xml, strip_delimiters, to_xml, DelimiterRule, DelimiterSpec,
    StructuredDocument, StructuredNode,
};
pub use proxy::{run_proxy, Proxy, ProxyConfig, ProxyError, SessionSummary};
pub use replay::{build_script, mark_placeholder, run_replay, ReplayScript, Substitution};
pub use sniff::{sniff_credentials, CredentialHit, SniffRuleSet};
