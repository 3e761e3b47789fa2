//! Execution of subject programs.
//!
//! [`PythonSandbox`] drives the bundled Python harness over its
//! newline-delimited JSON protocol. [`TableSandbox`] interprets synthetic
//! subjects given as input/output tables, which lets the pipeline be tested
//! without an interpreter.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::taxonomy::ExecutionResult;

mod python;
mod table;

pub use python::{PythonSandbox, HARNESS_SOURCE, PROTOCOL_VERSION};
pub use table::{TableCase, TableProgram, TableSandbox};

/// Default per-execution deadline.
pub const DEFAULT_TIMEOUT_MS: u64 = 5000;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("failed to start harness `{interpreter}`: {source}")]
    Spawn { interpreter: String, source: std::io::Error },

    #[error("harness process died: {0}")]
    HarnessCrash(String),

    #[error("harness protocol violation: {0}")]
    Protocol(String),
}

impl SandboxError {
    pub fn kind(&self) -> &'static str {
        match self {
            SandboxError::Spawn { .. } => "SandboxSpawn",
            SandboxError::HarnessCrash(_) => "HarnessCrash",
            SandboxError::Protocol(_) => "SandboxProtocol",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxCheck {
    pub ok: bool,
    #[serde(default)]
    pub diagnostic: Option<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SyntaxCheck {
    pub fn has_entry_point(&self) -> bool {
        self.ok && !self.warnings.iter().any(|w| w == "no-entry-point")
    }
}

/// Something that can syntax-check and execute subject programs.
///
/// Each handle is single-threaded; parallel callers hold one handle each.
pub trait Sandbox: Send {
    fn syntax_check(&mut self, source: &str, entry_point: &str) -> Result<SyntaxCheck, SandboxError>;

    /// Runs `entry_point(*args)` in a fresh namespace.
    fn execute(
        &mut self,
        source: &str,
        entry_point: &str,
        args: &[Value],
        timeout_ms: u64,
    ) -> Result<ExecutionResult, SandboxError>;

    /// Lines holding a two-way branch decision, used as the denominator of
    /// branch coverage.
    fn branch_points(&self, source: &str) -> BTreeSet<i64> {
        python_branch_points(source)
    }
}

impl<S: Sandbox + ?Sized> Sandbox for Box<S> {
    fn syntax_check(&mut self, source: &str, entry_point: &str) -> Result<SyntaxCheck, SandboxError> {
        (**self).syntax_check(source, entry_point)
    }

    fn execute(
        &mut self,
        source: &str,
        entry_point: &str,
        args: &[Value],
        timeout_ms: u64,
    ) -> Result<ExecutionResult, SandboxError> {
        (**self).execute(source, entry_point, args, timeout_ms)
    }

    fn branch_points(&self, source: &str) -> BTreeSet<i64> {
        (**self).branch_points(source)
    }
}

/// Line numbers (1-based) of `if`/`elif`/`while`/`for` headers.
pub fn python_branch_points(source: &str) -> BTreeSet<i64> {
    const HEADS: [&str; 5] = ["if", "elif", "while", "for", "async for"];
    source
        .lines()
        .enumerate()
        .filter(|(_, line)| {
            let t = line.trim_start();
            HEADS.iter().any(|h| {
                t.strip_prefix(h).is_some_and(|rest| rest.starts_with(|c: char| c.is_whitespace() || c == '('))
            })
        })
        .map(|(i, _)| i as i64 + 1)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_points_of_gcd() {
        let src = "def gcd(a, b):\n    if b == 0:\n        return a\n    else:\n        return gcd(a, a % b)\n";
        assert_eq!(python_branch_points(src), BTreeSet::from([2]));
        let loops = "def f(xs):\n    for x in xs:\n        while(x):\n            x -= 1\n    iffy = 1\n";
        assert_eq!(python_branch_points(loops), BTreeSet::from([2, 3]));
    }
}
