//! Standalone client mode: captured client packets become a replay script
//! whose templates can be re-targeted through placeholder substitution.

mod run;
mod script;

use std::io;

use thiserror::Error;

pub use run::{run_replay, ReplayOptions, ReplayOutcome};
pub use script::{
    binding_map, build_script, mark_placeholder, Placeholder, ReplayScript, ReplayStep,
    Substitution, DEFAULT_REPLY_TIMEOUT_MS,
};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("session has no client-to-server packets")]
    EmptyClientStream,
    #[error("step {0} does not exist")]
    StepOutOfBounds(usize),
    #[error("range {start}..{end} is outside step {step} (length {len})")]
    RangeOutOfBounds {
        step: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("range overlaps placeholder `{existing}` in step {step}")]
    OverlappingPlaceholder { step: usize, existing: String },
    #[error("placeholder `{0}` already exists in this step")]
    DuplicateName(String),
    #[error("`{0}` is not a valid placeholder name")]
    InvalidName(String),
    #[error("placeholder `{0}` has no binding")]
    UnboundPlaceholder(String),
    #[error("placeholder `{0}` is bound more than once")]
    DuplicateBinding(String),
    #[error("invalid binding `{0}`, expected name=value")]
    BadBinding(String),
    #[error("script line {line}: {msg}")]
    ScriptSyntax { line: usize, msg: String },
    #[error("cannot connect to {addr}: {source}")]
    ConnectFailed { addr: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PartialEq for ReplayError {
    fn eq(&self, other: &Self) -> bool {
        // io::Error is not comparable; compare the rendered message instead
        self.to_string() == other.to_string()
            && std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}
