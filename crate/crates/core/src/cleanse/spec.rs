use std::collections::HashSet;

use super::CleanseError;

/// Longest open or close sequence a rule may declare.
pub const MAX_DELIMITER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelimiterRule {
    pub element_name: String,
    pub open: Vec<u8>,
    pub close: Vec<u8>,
}

impl DelimiterRule {
    pub fn new(element_name: impl Into<String>, open: &[u8], close: &[u8]) -> Self {
        DelimiterRule {
            element_name: element_name.into(),
            open: open.to_vec(),
            close: close.to_vec(),
        }
    }
}

/// How Text bytes are rendered in XML. Only one policy exists today.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TextPolicy {
    /// Printable ASCII literally, everything else as `\xHH`.
    #[default]
    AsciiEscape,
}

/// The known introduction/termination sequences, in precedence order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelimiterSpec {
    rules: Vec<DelimiterRule>,
    text_policy: TextPolicy,
}

/// `[A-Za-z_][A-Za-z0-9._-]*`, a conservative subset of XML names.
pub fn is_xml_name(name: &str) -> bool {
    let mut bytes = name.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_alphabetic() || b == b'_' => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

impl DelimiterSpec {
    pub fn new(rules: Vec<DelimiterRule>) -> Result<Self, CleanseError> {
        let mut names = HashSet::new();
        let mut opens: HashSet<&[u8]> = HashSet::new();
        for r in &rules {
            if !is_xml_name(&r.element_name) {
                return Err(CleanseError::InvalidName(r.element_name.clone()));
            }
            if !names.insert(r.element_name.as_str()) {
                return Err(CleanseError::DuplicateName(r.element_name.clone()));
            }
            for seq in [&r.open, &r.close] {
                if seq.is_empty() || seq.len() > MAX_DELIMITER_LEN {
                    return Err(CleanseError::BadSequenceLength {
                        element: r.element_name.clone(),
                        len: seq.len(),
                    });
                }
            }
            if !opens.insert(&r.open) {
                return Err(CleanseError::DuplicateOpen(hex::encode(&r.open)));
            }
        }
        for r in &rules {
            if opens.contains(r.close.as_slice()) {
                return Err(CleanseError::OpenEqualsClose(hex::encode(&r.close)));
            }
        }
        Ok(DelimiterSpec {
            rules,
            text_policy: TextPolicy::AsciiEscape,
        })
    }

    /// The shipped rules for the HDP/0 demo protocol.
    pub fn hdp0() -> Self {
        DelimiterSpec::new(vec![
            DelimiterRule::new("record", &[0x02], &[0x03]),
            DelimiterRule::new("field", &[0x1F], &[0x1E]),
        ])
        .expect("built-in spec is valid")
    }

    pub fn rules(&self) -> &[DelimiterRule] {
        &self.rules
    }

    pub fn text_policy(&self) -> TextPolicy {
        self.text_policy
    }

    /// Total number of delimiter bytes declared.
    pub fn delimiter_byte_count(&self) -> usize {
        self.rules.iter().map(|r| r.open.len() + r.close.len()).sum()
    }

    pub fn rule(&self, element_name: &str) -> Option<&DelimiterRule> {
        self.rules.iter().find(|r| r.element_name == element_name)
    }

    /// Parses `rule <name> open=<hex> close=<hex>` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, CleanseError> {
        let mut rules = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: &str| CleanseError::SpecSyntax {
                line: line_no,
                msg: msg.to_string(),
            };
            let words: Vec<&str> = line.split_whitespace().collect();
            let ["rule", name, open, close] = words[..] else {
                return Err(syntax("expected `rule <name> open=<hex> close=<hex>`"));
            };
            let open = open
                .strip_prefix("open=")
                .ok_or_else(|| syntax("expected open=<hex>"))?;
            let close = close
                .strip_prefix("close=")
                .ok_or_else(|| syntax("expected close=<hex>"))?;
            let open = hex::decode(open).map_err(|_| syntax("invalid open hex"))?;
            let close = hex::decode(close).map_err(|_| syntax("invalid close hex"))?;
            rules.push(DelimiterRule {
                element_name: name.to_string(),
                open,
                close,
            });
        }
        DelimiterSpec::new(rules)
    }

    pub fn to_text(&self) -> String {
        self.rules
            .iter()
            .map(|r| {
                format!(
                    "rule {} open={} close={}\n",
                    r.element_name,
                    hex::encode(&r.open),
                    hex::encode(&r.close)
                )
            })
            .collect()
    }
}
