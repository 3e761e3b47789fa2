//! Programs, test cases, execution results, and the five-way classification
//! of a found test case against a ground-truth patched program.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::pylit;
use crate::sandbox::Sandbox;
use crate::{Error, Result};

/// Absolute tolerance for comparing numbers when either side is non-integer.
pub const FLOAT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeTag {
    Int,
    Float,
    String,
    Bool,
    List,
    Dict,
    Tuple,
    None,
    Any,
}

impl TypeTag {
    /// Whether `v` (in sandbox wire encoding) is an acceptable argument for
    /// a parameter of this type.
    pub fn admits(self, v: &Value) -> bool {
        let tag = pylit::tagged(v).map(|(t, _)| t);
        match self {
            TypeTag::Any => true,
            TypeTag::Int => v.as_i64().is_some() || v.as_u64().is_some(),
            TypeTag::Float => v.is_number() || tag == Some("float"),
            TypeTag::String => v.is_string(),
            TypeTag::Bool => v.is_boolean(),
            TypeTag::List => v.is_array(),
            TypeTag::Dict => v.is_object() && tag.is_none(),
            TypeTag::Tuple => v.is_array() || tag == Some("tuple"),
            TypeTag::None => v.is_null(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramUnderTest {
    pub id: String,
    pub source: String,
    pub entry_point: String,
    pub arity: usize,
    pub param_types: Vec<TypeTag>,
}

impl ProgramUnderTest {
    pub fn new(
        id: impl Into<String>,
        source: impl Into<String>,
        entry_point: impl Into<String>,
        param_types: Vec<TypeTag>,
    ) -> Self {
        ProgramUnderTest {
            id: id.into(),
            source: source.into(),
            entry_point: entry_point.into(),
            arity: param_types.len(),
            param_types,
        }
    }

    /// Checks the structural invariants, including that the source parses
    /// and defines the entry point.
    pub fn validate(&self, sandbox: &mut dyn Sandbox) -> Result<()> {
        if self.param_types.len() != self.arity {
            return Err(Error::Config(format!(
                "{}: param_types has {} entries but arity is {}",
                self.id,
                self.param_types.len(),
                self.arity
            )));
        }
        let check = sandbox.syntax_check(&self.source, &self.entry_point)?;
        if !check.ok {
            return Err(Error::Config(format!(
                "{}: source does not parse: {}",
                self.id,
                check.diagnostic.unwrap_or_default()
            )));
        }
        if !defines_function(&self.source, &self.entry_point) {
            return Err(Error::Config(format!("{}: entry point `{}` is not defined", self.id, self.entry_point)));
        }
        Ok(())
    }

    /// Static legality of an argument list: arity and declared types.
    pub fn check_args(&self, args: &[Value]) -> std::result::Result<(), String> {
        if args.len() != self.arity {
            return Err(format!("expected {} arguments, got {}", self.arity, args.len()));
        }
        for (i, (tag, arg)) in self.param_types.iter().zip(args).enumerate() {
            if !tag.admits(arg) {
                return Err(format!("argument {} `{}` is not {:?}", i + 1, pylit::render(arg), tag));
            }
        }
        Ok(())
    }
}

/// Whether `source` defines a top-level function `name`.
pub fn defines_function(source: &str, name: &str) -> bool {
    source.lines().any(|line| {
        let rest = line.strip_prefix("async def ").or_else(|| line.strip_prefix("def ")).map(str::trim_start);
        rest.and_then(|r| r.strip_prefix(name)).is_some_and(|after| after.trim_start().starts_with('('))
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intention {
    pub text: String,
    pub put_id: String,
    pub raw_response: String,
}

impl Intention {
    /// Heuristic flag for intentions too thin to drive reference synthesis.
    pub fn is_low_confidence(&self) -> bool {
        let lower = self.text.to_lowercase();
        self.text.split_whitespace().count() < 5
            || ["unclear", "not enough information", "cannot determine", "does nothing", "empty function"]
                .iter()
                .any(|m| lower.contains(m))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceVersion {
    pub index: usize,
    pub source: String,
    pub entry_point: String,
    pub intention: Intention,
    pub compilable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputOrigin {
    Llm,
    Manual,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestInput {
    pub args: Vec<Value>,
    pub origin: InputOrigin,
}

impl TestInput {
    pub fn manual(args: Vec<Value>) -> Self {
        TestInput { args, origin: InputOrigin::Manual }
    }

    pub fn render_call(&self, entry_point: &str) -> String {
        format!("{entry_point}({})", pylit::render_args(&self.args))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: TestInput,
    /// Expected output. A subject exception is encoded as
    /// `{"__t": "exception", "v": "<type>"}`.
    pub expected: Value,
}

impl TestCase {
    pub fn new(args: Vec<Value>, expected: Value) -> Self {
        TestCase { input: TestInput::manual(args), expected }
    }

    /// Assert-style rendering: `gcd(12, 20) == 4`.
    pub fn render_assert(&self, entry_point: &str) -> String {
        let call = self.input.render_call(entry_point);
        match Output::from_expected(&self.expected) {
            Output::Exception(t) => format!("{call} raises {t}"),
            _ => format!("{call} == {}", pylit::render(&self.expected)),
        }
    }
}

/// Wire shape of a persisted test case: `{"args": [...], "expected": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCaseRecord {
    pub args: Vec<Value>,
    pub expected: Value,
}

impl From<&TestCase> for TestCaseRecord {
    fn from(t: &TestCase) -> Self {
        TestCaseRecord { args: t.input.args.clone(), expected: t.expected.clone() }
    }
}

impl From<TestCaseRecord> for TestCase {
    fn from(r: TestCaseRecord) -> Self {
        TestCase::new(r.args, r.expected)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Exception,
    Timeout,
    IllegalInput,
}

/// Set of executed `(line_from, line_to)` arcs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoverageSet {
    pub arcs: BTreeSet<(i64, i64)>,
}

impl CoverageSet {
    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    /// Adds every arc of `other`; returns how many were new.
    pub fn absorb(&mut self, other: &CoverageSet) -> usize {
        let before = self.arcs.len();
        self.arcs.extend(other.arcs.iter().copied());
        self.arcs.len() - before
    }

    pub fn is_superset(&self, other: &CoverageSet) -> bool {
        self.arcs.is_superset(&other.arcs)
    }

    /// Distinct successor lines observed from `line`.
    pub fn successors(&self, line: i64) -> usize {
        self.arcs.range((line, i64::MIN)..=(line, i64::MAX)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exception_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageSet>,
    #[serde(default)]
    pub wall_time_ms: u64,
}

impl ExecutionResult {
    pub fn ok(value: Value) -> Self {
        ExecutionResult {
            status: ExecStatus::Ok,
            value: Some(value),
            exception_type: None,
            coverage: Some(CoverageSet::default()),
            wall_time_ms: 0,
        }
    }

    pub fn exception(kind: impl Into<String>) -> Self {
        ExecutionResult {
            status: ExecStatus::Exception,
            value: None,
            exception_type: Some(kind.into()),
            coverage: Some(CoverageSet::default()),
            wall_time_ms: 0,
        }
    }

    pub fn timeout(wall_time_ms: u64) -> Self {
        ExecutionResult { status: ExecStatus::Timeout, value: None, exception_type: None, coverage: None, wall_time_ms }
    }

    pub fn illegal_input() -> Self {
        ExecutionResult {
            status: ExecStatus::IllegalInput,
            value: None,
            exception_type: Some("TypeError".into()),
            coverage: Some(CoverageSet::default()),
            wall_time_ms: 0,
        }
    }

    pub fn with_coverage(mut self, coverage: CoverageSet) -> Self {
        if self.status != ExecStatus::Timeout {
            self.coverage = Some(coverage);
        }
        self
    }

    pub fn output(&self) -> Output {
        match self.status {
            ExecStatus::Ok => Output::Value(self.value.clone().unwrap_or(Value::Null)),
            ExecStatus::Exception => Output::Exception(self.exception_type.clone().unwrap_or_default()),
            ExecStatus::Timeout => Output::Timeout,
            ExecStatus::IllegalInput => Output::Illegal,
        }
    }

    /// True iff exactly the fields implied by `status` are present.
    pub fn is_well_formed(&self) -> bool {
        match self.status {
            ExecStatus::Ok => self.value.is_some() && self.coverage.is_some(),
            ExecStatus::Exception => self.value.is_none() && self.exception_type.is_some(),
            ExecStatus::Timeout => self.value.is_none() && self.coverage.is_none(),
            ExecStatus::IllegalInput => self.value.is_none(),
        }
    }
}

/// Observable outcome of running a subject on one input.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Value(Value),
    Exception(String),
    Timeout,
    Illegal,
}

impl Output {
    /// Decodes an asserted expected value, recognising the exception sidecar.
    pub fn from_expected(v: &Value) -> Output {
        match pylit::tagged(v) {
            Some(("exception", Value::String(t))) => Output::Exception(t.clone()),
            _ => Output::Value(v.clone()),
        }
    }

    /// Value form for use as an expected output. `None` for timeouts and
    /// illegal inputs, which cannot be asserted.
    pub fn to_expected(&self) -> Option<Value> {
        match self {
            Output::Value(v) => Some(v.clone()),
            Output::Exception(t) => Some(json!({ pylit::TAG: "exception", "v": t })),
            Output::Timeout | Output::Illegal => None,
        }
    }
}

impl fmt::Display for Output {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Output::Value(v) => f.write_str(&pylit::render(v)),
            Output::Exception(t) => write!(f, "<raises {t}>"),
            Output::Timeout => f.write_str("<timeout>"),
            Output::Illegal => f.write_str("<illegal input>"),
        }
    }
}

/// Output equality used everywhere outputs are compared. Timeouts and
/// illegal-input results equal nothing, themselves included.
pub fn output_equal(a: &Output, b: &Output) -> bool {
    match (a, b) {
        (Output::Value(x), Output::Value(y)) => values_equal(x, y),
        (Output::Exception(x), Output::Exception(y)) => x == y,
        _ => false,
    }
}

/// Structural equality with [`FLOAT_TOLERANCE`] for non-integer numbers.
pub fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let ints = |n: &serde_json::Number| n.as_i64().map(i128::from).or_else(|| n.as_u64().map(i128::from));
            match (ints(x), ints(y)) {
                (Some(i), Some(j)) => i == j,
                _ => match (x.as_f64(), y.as_f64()) {
                    (Some(f), Some(g)) => (f - g).abs() <= FLOAT_TOLERANCE,
                    _ => false,
                },
            }
        }
        (Value::Array(xs), Value::Array(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| values_equal(x, y))
        }
        (Value::Object(xs), Value::Object(ys)) => {
            xs.len() == ys.len() && xs.iter().all(|(k, x)| ys.get(k).is_some_and(|y| values_equal(x, y)))
        }
        _ => a == b,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "FT-IA")]
    FtIA,
    #[serde(rename = "FT-Ia")]
    FtIa,
    #[serde(rename = "FT-ia")]
    Ftia,
    #[serde(rename = "PT")]
    Pt,
    #[serde(rename = "IT")]
    It,
}

impl Verdict {
    pub const ALL: [Verdict; 5] = [Verdict::FtIA, Verdict::FtIa, Verdict::Ftia, Verdict::Pt, Verdict::It];

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::FtIA => "FT-IA",
            Verdict::FtIa => "FT-Ia",
            Verdict::Ftia => "FT-ia",
            Verdict::Pt => "PT",
            Verdict::It => "IT",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Verdict::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| format!("unknown verdict `{s}`"))
    }
}

/// A verdict plus the `PT-masking` sub-label for a test whose assertion
/// equals the buggy output on a failure-revealing input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub masking: bool,
}

impl Classification {
    pub fn of(verdict: Verdict) -> Self {
        Classification { verdict, masking: false }
    }

    pub fn label(&self) -> &'static str {
        if self.masking {
            "PT-masking"
        } else {
            self.verdict.as_str()
        }
    }
}

/// Decides the category from the observed outputs.
///
/// `well_typed` is the static legality of the input; `truth` is the patched
/// program's output, `buggy` the PUT's.
pub fn categorize(well_typed: bool, buggy: &Output, truth: &Output, expected: &Output) -> Result<Classification> {
    if !well_typed || *truth == Output::Illegal {
        return Ok(Classification::of(Verdict::It));
    }
    if *truth == Output::Timeout {
        return Err(Error::AmbiguousVerdict);
    }
    let reveals = !output_equal(buggy, truth);
    let asserts_truth = output_equal(expected, truth);
    Ok(match (reveals, asserts_truth) {
        (true, true) => Classification::of(Verdict::FtIA),
        (true, false) if output_equal(expected, buggy) => Classification { verdict: Verdict::Pt, masking: true },
        (true, false) => Classification::of(Verdict::FtIa),
        (false, false) => Classification::of(Verdict::Ftia),
        (false, true) => Classification::of(Verdict::Pt),
    })
}

/// Classifies `test` by running it on both the buggy and patched programs.
pub fn classify(
    test: &TestCase,
    buggy: &ProgramUnderTest,
    patched: &ProgramUnderTest,
    sandbox: &mut dyn Sandbox,
    timeout_ms: u64,
) -> Result<Classification> {
    let args = &test.input.args;
    if patched.check_args(args).is_err() {
        return Ok(Classification::of(Verdict::It));
    }
    let truth = sandbox.execute(&patched.source, &patched.entry_point, args, timeout_ms)?.output();
    if truth == Output::Illegal {
        return Ok(Classification::of(Verdict::It));
    }
    let observed = sandbox.execute(&buggy.source, &buggy.entry_point, args, timeout_ms)?.output();
    categorize(true, &observed, &truth, &Output::from_expected(&test.expected))
}
