use std::collections::HashMap;
use std::fmt::Write as _;

use crate::capture::{Direction, Session, SessionId};

use super::ReplayError;

pub const DEFAULT_REPLY_TIMEOUT_MS: u64 = 2000;

/// A named byte span of a step template, replaced at render time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placeholder {
    pub start: usize,
    pub end: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayStep {
    pub template: Vec<u8>,
    /// Sorted by `start`, non-overlapping.
    pub placeholders: Vec<Placeholder>,
    pub expect_reply: bool,
    pub reply_timeout_ms: u64,
}

impl ReplayStep {
    pub fn new(template: Vec<u8>) -> Self {
        ReplayStep {
            template,
            placeholders: Vec::new(),
            expect_reply: true,
            reply_timeout_ms: DEFAULT_REPLY_TIMEOUT_MS,
        }
    }

    /// Splices bound values into the placeholder spans.
    pub fn render(&self, bindings: &HashMap<&str, &[u8]>) -> Result<Vec<u8>, ReplayError> {
        let mut out = Vec::with_capacity(self.template.len());
        let mut cursor = 0;
        for ph in &self.placeholders {
            let value = bindings
                .get(ph.name.as_str())
                .ok_or_else(|| ReplayError::UnboundPlaceholder(ph.name.clone()))?;
            out.extend_from_slice(&self.template[cursor..ph.start]);
            out.extend_from_slice(value);
            cursor = ph.end;
        }
        out.extend_from_slice(&self.template[cursor..]);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayScript {
    pub source_session: SessionId,
    pub steps: Vec<ReplayStep>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Substitution {
    pub name: String,
    pub value: Vec<u8>,
}

impl Substitution {
    pub fn new(name: impl Into<String>, value: impl Into<Vec<u8>>) -> Self {
        Substitution {
            name: name.into(),
            value: value.into(),
        }
    }

    /// Parses `name=hexvalue`.
    pub fn parse_hex(arg: &str) -> Result<Self, ReplayError> {
        let (name, value) = arg
            .split_once('=')
            .ok_or_else(|| ReplayError::BadBinding(arg.to_string()))?;
        let value = hex::decode(value).map_err(|_| ReplayError::BadBinding(arg.to_string()))?;
        Ok(Substitution::new(name, value))
    }

    /// Parses `name=string`; the value is taken verbatim.
    pub fn parse_str(arg: &str) -> Result<Self, ReplayError> {
        let (name, value) = arg
            .split_once('=')
            .ok_or_else(|| ReplayError::BadBinding(arg.to_string()))?;
        Ok(Substitution::new(name, value.as_bytes()))
    }
}

/// Indexes bindings by name; each name may be bound once.
pub fn binding_map(bindings: &[Substitution]) -> Result<HashMap<&str, &[u8]>, ReplayError> {
    let mut map = HashMap::with_capacity(bindings.len());
    for b in bindings {
        if map.insert(b.name.as_str(), b.value.as_slice()).is_some() {
            return Err(ReplayError::DuplicateBinding(b.name.clone()));
        }
    }
    Ok(map)
}

fn is_placeholder_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_graphic() && b != b'=')
}

/// One step per client packet, payload verbatim. A step expects a reply iff
/// a server packet arrived before the next client packet.
pub fn build_script(session: &Session) -> Result<ReplayScript, ReplayError> {
    let mut steps: Vec<ReplayStep> = Vec::new();
    for p in &session.packets {
        match p.direction {
            Direction::ClientToServer => {
                let mut step = ReplayStep::new(p.payload.clone());
                step.expect_reply = false;
                steps.push(step);
            }
            Direction::ServerToClient => {
                if let Some(last) = steps.last_mut() {
                    last.expect_reply = true;
                }
            }
        }
    }
    if steps.is_empty() {
        return Err(ReplayError::EmptyClientStream);
    }
    Ok(ReplayScript {
        source_session: session.session_id,
        steps,
    })
}

/// Returns a copy of `script` with `start..end` of step `step_index` marked
/// as placeholder `name`.
pub fn mark_placeholder(
    script: &ReplayScript,
    step_index: usize,
    start: usize,
    end: usize,
    name: &str,
) -> Result<ReplayScript, ReplayError> {
    let mut out = script.clone();
    insert_placeholder(&mut out, step_index, start, end, name)?;
    Ok(out)
}

fn insert_placeholder(
    script: &mut ReplayScript,
    step_index: usize,
    start: usize,
    end: usize,
    name: &str,
) -> Result<(), ReplayError> {
    if !is_placeholder_name(name) {
        return Err(ReplayError::InvalidName(name.to_string()));
    }
    let step = script
        .steps
        .get_mut(step_index)
        .ok_or(ReplayError::StepOutOfBounds(step_index))?;
    if start >= end || end > step.template.len() {
        return Err(ReplayError::RangeOutOfBounds {
            step: step_index,
            start,
            end,
            len: step.template.len(),
        });
    }
    if step.placeholders.iter().any(|p| p.name == name) {
        return Err(ReplayError::DuplicateName(name.to_string()));
    }
    if let Some(other) = step.placeholders.iter().find(|p| start < p.end && p.start < end) {
        return Err(ReplayError::OverlappingPlaceholder {
            step: step_index,
            existing: other.name.clone(),
        });
    }
    let at = step.placeholders.partition_point(|p| p.start < start);
    step.placeholders.insert(
        at,
        Placeholder {
            start,
            end,
            name: name.to_string(),
        },
    );
    Ok(())
}

impl ReplayScript {
    pub fn placeholder_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .steps
            .iter()
            .flat_map(|s| s.placeholders.iter().map(|p| p.name.as_str()))
            .collect();
        names.sort_unstable();
        names.dedup();
        names
    }

    /// Renders every step; fails before any I/O if a placeholder is unbound.
    pub fn render_all(&self, bindings: &[Substitution]) -> Result<Vec<Vec<u8>>, ReplayError> {
        let map = binding_map(bindings)?;
        self.steps.iter().map(|s| s.render(&map)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("source {}\n", self.source_session.to_hex());
        for (i, s) in self.steps.iter().enumerate() {
            let _ = writeln!(
                out,
                "step {i} payload_hex={} expect_reply={} timeout_ms={}",
                hex::encode(&s.template),
                u8::from(s.expect_reply),
                s.reply_timeout_ms
            );
        }
        for (i, s) in self.steps.iter().enumerate() {
            for p in &s.placeholders {
                let _ = writeln!(out, "placeholder {i} {} {} {}", p.start, p.end, p.name);
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ReplayError> {
        let mut source = None;
        let mut steps: Vec<ReplayStep> = Vec::new();
        let mut placeholders = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |msg: &str| ReplayError::ScriptSyntax {
                line: line_no,
                msg: msg.to_string(),
            };
            let words: Vec<&str> = line.split_whitespace().collect();
            match words[..] {
                ["source", id] => {
                    if source.is_some() {
                        return Err(syntax("duplicate source directive"));
                    }
                    source = Some(SessionId::from_hex(id).ok_or_else(|| syntax("invalid session id"))?);
                }
                ["step", index, payload, expect, timeout] => {
                    let index: usize = index.parse().map_err(|_| syntax("invalid step index"))?;
                    if index != steps.len() {
                        return Err(syntax("steps must be numbered 0, 1, 2, ... in order"));
                    }
                    let template = payload
                        .strip_prefix("payload_hex=")
                        .and_then(|h| hex::decode(h).ok())
                        .filter(|t| !t.is_empty())
                        .ok_or_else(|| syntax("expected non-empty payload_hex=<hex>"))?;
                    let expect_reply = match expect.strip_prefix("expect_reply=") {
                        Some("0") => false,
                        Some("1") => true,
                        _ => return Err(syntax("expected expect_reply=<0|1>")),
                    };
                    let reply_timeout_ms = timeout
                        .strip_prefix("timeout_ms=")
                        .and_then(|t| t.parse::<u64>().ok())
                        .filter(|&t| t > 0)
                        .ok_or_else(|| syntax("expected timeout_ms=<positive int>"))?;
                    steps.push(ReplayStep {
                        template,
                        placeholders: Vec::new(),
                        expect_reply,
                        reply_timeout_ms,
                    });
                }
                ["placeholder", step, start, end, name] => {
                    let num = |s: &str| s.parse::<usize>().map_err(|_| syntax("invalid integer"));
                    placeholders.push((num(step)?, num(start)?, num(end)?, name.to_string()));
                }
                _ => return Err(syntax("unrecognized directive")),
            }
        }
        let mut script = ReplayScript {
            source_session: source.ok_or(ReplayError::ScriptSyntax {
                line: 0,
                msg: "missing source directive".into(),
            })?,
            steps,
        };
        if script.steps.is_empty() {
            return Err(ReplayError::EmptyClientStream);
        }
        for (step, start, end, name) in placeholders {
            insert_placeholder(&mut script, step, start, end, &name)?;
        }
        Ok(script)
    }
}
