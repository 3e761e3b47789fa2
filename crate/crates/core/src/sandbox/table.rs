use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Sandbox, SandboxError, SyntaxCheck};
use crate::taxonomy::{values_equal, ExecutionResult};

/// One row of a synthetic subject. `results` is cycled on repeated calls,
/// so a row with two different results models a nondeterministic subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCase {
    pub args: Vec<Value>,
    pub results: Vec<ExecutionResult>,
}

/// A synthetic subject program: a lookup table from inputs to results.
/// Its "source" is the JSON serialization of this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableProgram {
    pub entry_point: String,
    pub cases: Vec<TableCase>,
    /// Result for inputs with no row; an exception when absent.
    #[serde(default)]
    pub default: Option<ExecutionResult>,
    #[serde(default)]
    pub branch_points: BTreeSet<i64>,
}

impl TableProgram {
    pub fn new(entry_point: impl Into<String>) -> Self {
        TableProgram {
            entry_point: entry_point.into(),
            cases: Vec::new(),
            default: None,
            branch_points: BTreeSet::new(),
        }
    }

    pub fn case(mut self, args: Vec<Value>, result: ExecutionResult) -> Self {
        self.cases.push(TableCase { args, results: vec![result] });
        self
    }

    pub fn source(&self) -> String {
        serde_json::to_string(self).expect("table serializes")
    }

    pub fn parse(source: &str) -> Option<TableProgram> {
        serde_json::from_str(source).ok()
    }
}

/// Sandbox over [`TableProgram`] sources. Counts executions.
#[derive(Debug, Default)]
pub struct TableSandbox {
    calls: HashMap<(String, String), usize>,
    executions: usize,
}

impl TableSandbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn executions(&self) -> usize {
        self.executions
    }
}

impl Sandbox for TableSandbox {
    fn syntax_check(&mut self, source: &str, entry_point: &str) -> Result<SyntaxCheck, SandboxError> {
        Ok(match TableProgram::parse(source) {
            Some(p) => SyntaxCheck {
                ok: true,
                diagnostic: None,
                warnings: if p.entry_point == entry_point { vec![] } else { vec!["no-entry-point".into()] },
            },
            None => SyntaxCheck { ok: false, diagnostic: Some("not a table program".into()), warnings: vec![] },
        })
    }

    fn execute(
        &mut self,
        source: &str,
        entry_point: &str,
        args: &[Value],
        _timeout_ms: u64,
    ) -> Result<ExecutionResult, SandboxError> {
        self.executions += 1;
        let Some(program) = TableProgram::parse(source) else {
            return Ok(ExecutionResult::exception("SyntaxError"));
        };
        if program.entry_point != entry_point {
            return Ok(ExecutionResult::exception("KeyError"));
        }
        let row = program
            .cases
            .iter()
            .find(|c| c.args.len() == args.len() && c.args.iter().zip(args).all(|(a, b)| values_equal(a, b)));
        let result = match row {
            Some(row) if !row.results.is_empty() => {
                let key = (source.to_string(), serde_json::to_string(args).unwrap_or_default());
                let n = self.calls.entry(key).or_insert(0);
                let r = row.results[*n % row.results.len()].clone();
                *n += 1;
                r
            }
            _ => program.default.clone().unwrap_or_else(|| ExecutionResult::exception("LookupError")),
        };
        Ok(result)
    }

    fn branch_points(&self, source: &str) -> BTreeSet<i64> {
        TableProgram::parse(source).map(|p| p.branch_points).unwrap_or_default()
    }
}
