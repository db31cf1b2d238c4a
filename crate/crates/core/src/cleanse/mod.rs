//! Delimiter-driven data cleansing: raw bytes plus a set of known
//! introduction/termination sequences become a tree, then XML.

mod build;
mod spec;
mod xml;

use thiserror::Error;

pub use build::{
    build_structure, strip_delimiters, Element, StructuredDocument, StructuredNode, MAX_DEPTH,
    ROOT_NAME,
};
pub use spec::{is_xml_name, DelimiterRule, DelimiterSpec, TextPolicy, MAX_DELIMITER_LEN};
pub use xml::{from_xml, to_xml, XML_DECLARATION};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CleanseError {
    #[error("`{0}` is not a valid element name")]
    InvalidName(String),
    #[error("duplicate element name `{0}`")]
    DuplicateName(String),
    #[error("open sequence {0} declared twice")]
    DuplicateOpen(String),
    #[error("sequence {0} is used both as an open and a close")]
    OpenEqualsClose(String),
    #[error("delimiter of `{element}` has length {len}, expected 1..=8")]
    BadSequenceLength { element: String, len: usize },
    #[error("spec line {line}: {msg}")]
    SpecSyntax { line: usize, msg: String },
    #[error("malformed XML at offset {offset}: {msg}")]
    MalformedXml { offset: usize, msg: String },
}

/// Raw bytes to XML in one step.
pub fn extract_xml(raw: &[u8], spec: &DelimiterSpec) -> String {
    to_xml(&build_structure(raw, spec))
}
