//! Test case generation by differential testing against reference versions.
//!
//! Inputs come from the model; the expected output of an input is the
//! output all reference versions agree on. The first consensus input on
//! which the PUT disagrees becomes the failure-inducing test case.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baseline::BaselineDisposition;
use crate::generator::extract_code_blocks;
use crate::llm::{Llm, PromptBook, PromptContext, PromptKind};
use crate::pylit;
use crate::sandbox::{Sandbox, DEFAULT_TIMEOUT_MS};
use crate::taxonomy::{
    output_equal, values_equal, CoverageSet, ExecStatus, ExecutionResult, InputOrigin, Output, ProgramUnderTest,
    ReferenceVersion, TestCaseRecord, TestInput,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestGenConfig {
    pub k_attempts: usize,
    pub saturation_window: usize,
    /// Inputs taken from each model response.
    pub inputs_per_prompt: usize,
    pub timeout_ms: u64,
    /// Count every input as an attempt, not just consensus-reaching ones.
    pub strict_attempts: bool,
}

impl Default for TestGenConfig {
    fn default() -> Self {
        TestGenConfig {
            k_attempts: 10,
            saturation_window: 5,
            inputs_per_prompt: 10,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            strict_attempts: false,
        }
    }
}

impl TestGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_attempts == 0 || self.saturation_window == 0 || self.inputs_per_prompt == 0 {
            return Err(Error::Config("k_attempts, saturation_window and inputs_per_prompt must be >= 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config("timeout_ms must be > 0".into()));
        }
        Ok(())
    }

    /// Cap on discarded (non-consensus or illegal) inputs.
    pub fn max_discards(&self) -> usize {
        10 * self.k_attempts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Technique {
    #[serde(rename = "diffprompt")]
    DiffPrompt,
    #[serde(rename = "base_chatgpt")]
    BaseChatGpt,
}

impl Technique {
    pub const ALL: [Technique; 2] = [Technique::DiffPrompt, Technique::BaseChatGpt];

    pub fn as_str(self) -> &'static str {
        match self {
            Technique::DiffPrompt => "diffprompt",
            Technique::BaseChatGpt => "base_chatgpt",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Technique {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Technique::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown technique `{s}` (expected diffprompt or base_chatgpt)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Found,
    NotFoundAttemptsExhausted,
    NotFoundCoverageSaturated,
    NotFoundInputsExhausted,
    /// Baseline techniques that stop without testing.
    NotFound,
}

impl OutcomeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeStatus::Found => "found",
            OutcomeStatus::NotFoundAttemptsExhausted => "not_found_attempts_exhausted",
            OutcomeStatus::NotFoundCoverageSaturated => "not_found_coverage_saturated",
            OutcomeStatus::NotFoundInputsExhausted => "not_found_inputs_exhausted",
            OutcomeStatus::NotFound => "not_found",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    /// Consensus reached and the PUT differs: success.
    ConsensusDiff,
    ConsensusSame,
    NoConsensus,
    Illegal,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub input: TestInput,
    pub ref_outputs: Vec<ExecutionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub put_output: Option<ExecutionResult>,
    pub disposition: Disposition,
    /// Whether this input consumed one of the k attempts.
    pub counted: bool,
    /// Size of the accumulated PUT coverage after this input.
    pub coverage_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub technique: Technique,
    pub status: OutcomeStatus,
    #[serde(default)]
    pub test_case: Option<TestCaseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disposition: Option<BaselineDisposition>,
    #[serde(default)]
    pub trace: Vec<AttemptRecord>,
}

impl PipelineOutcome {
    pub fn empty(technique: Technique, status: OutcomeStatus) -> Self {
        PipelineOutcome { technique, status, test_case: None, disposition: None, trace: Vec::new() }
    }

    pub fn found(&self) -> bool {
        self.status == OutcomeStatus::Found
    }

    pub fn attempts(&self) -> usize {
        self.trace.iter().filter(|a| a.counted).count()
    }

    /// Writes `outcome.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("outcome.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Parses model-proposed inputs: a JSON array of argument arrays, or one
/// call expression per line. Returns the deduplicated argument lists in
/// first-seen order and the number of malformed call lines.
pub fn parse_inputs(text: &str, entry_point: &str) -> (Vec<Vec<Value>>, usize) {
    let mut candidates: Vec<&str> = vec![text];
    let blocks = extract_code_blocks(text);
    candidates.extend(blocks.iter().map(String::as_str));
    for c in &candidates {
        if let Ok(Value::Array(rows)) = serde_json::from_str::<Value>(c.trim()) {
            if !rows.is_empty() && rows.iter().all(Value::is_array) {
                let args = rows
                    .into_iter()
                    .map(|r| match r {
                        Value::Array(a) => a,
                        _ => unreachable!(),
                    })
                    .collect();
                return (dedup(args), 0);
            }
        }
    }
    let mut warnings = 0;
    let mut found = Vec::new();
    for line in text.lines() {
        match pylit::find_call(line, entry_point) {
            Ok(Some(call)) => found.push(call.args),
            Ok(None) => {}
            Err(e) => {
                log::debug!("skipping malformed input line `{line}`: {e}");
                warnings += 1;
            }
        }
    }
    (dedup(found), warnings)
}

fn same_args(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| values_equal(x, y) && x.is_number() == y.is_number())
}

fn dedup(all: Vec<Vec<Value>>) -> Vec<Vec<Value>> {
    let mut out: Vec<Vec<Value>> = Vec::new();
    for args in all {
        if !out.iter().any(|seen| same_args(seen, &args)) {
            out.push(args);
        }
    }
    out
}

/// Result of asking every reference version about one input.
#[derive(Debug, Clone, PartialEq)]
pub enum Consensus {
    Agreed(Output),
    NoConsensus(Disposition),
}

/// Runs `input` on every reference and reports their common output, if any.
/// Any timeout or illegal-input result prevents consensus.
pub fn consensus_expected(
    input: &TestInput,
    refs: &[ReferenceVersion],
    sandbox: &mut dyn Sandbox,
    timeout_ms: u64,
) -> Result<(Consensus, Vec<ExecutionResult>)> {
    let mut results = Vec::with_capacity(refs.len());
    for r in refs {
        results.push(sandbox.execute(&r.source, &r.entry_point, &input.args, timeout_ms)?);
    }
    let consensus = if results.iter().any(|r| r.status == ExecStatus::Timeout) {
        Consensus::NoConsensus(Disposition::Timeout)
    } else if results.iter().any(|r| r.status == ExecStatus::IllegalInput) {
        Consensus::NoConsensus(Disposition::Illegal)
    } else {
        let outputs: Vec<Output> = results.iter().map(ExecutionResult::output).collect();
        match outputs.split_first() {
            Some((first, rest)) if rest.iter().all(|o| output_equal(first, o)) => Consensus::Agreed(first.clone()),
            _ => Consensus::NoConsensus(Disposition::NoConsensus),
        }
    };
    Ok((consensus, results))
}

/// Branch coverage is complete when every branch line has been seen to
/// take two different successors. Code without branch lines never
/// completes; only the stale window stops it.
pub fn coverage_complete(branch_points: &BTreeSet<i64>, coverage: &CoverageSet) -> bool {
    !branch_points.is_empty() && branch_points.iter().all(|line| coverage.successors(*line) >= 2)
}

/// Test case generator over a fixed set of reference versions.
pub struct TestCaseGenerator<'a> {
    pub llm: &'a Llm,
    pub prompts: &'a PromptBook,
    pub cfg: TestGenConfig,
}

impl<'a> TestCaseGenerator<'a> {
    pub fn new(llm: &'a Llm, prompts: &'a PromptBook, cfg: TestGenConfig) -> Self {
        TestCaseGenerator { llm, prompts, cfg }
    }

    pub fn generate_inputs(&self, put: &ProgramUnderTest) -> Result<Vec<TestInput>> {
        let req = self.prompts.render_prompt(
            PromptKind::GenerateInputs,
            &PromptContext::GenerateInputs { source: &put.source, entry_point: &put.entry_point },
        )?;
        let resp = self.llm.complete(&req)?;
        let (args, warnings) = parse_inputs(&resp.content, &put.entry_point);
        if args.is_empty() {
            return Err(Error::NoParsableInputs { warnings });
        }
        if warnings > 0 {
            log::info!("{}: skipped {warnings} malformed input lines", put.id);
        }
        Ok(args
            .into_iter()
            .take(self.cfg.inputs_per_prompt)
            .map(|args| TestInput { args, origin: InputOrigin::Llm })
            .collect())
    }

    pub fn find_failure_inducing(
        &self,
        put: &ProgramUnderTest,
        refs: &[ReferenceVersion],
        sandbox: &mut dyn Sandbox,
    ) -> Result<PipelineOutcome> {
        self.cfg.validate()?;
        if refs.len() < 2 || refs.iter().any(|r| !r.compilable) {
            return Err(Error::Config("differential testing needs at least two compilable references".into()));
        }
        let timeout = self.cfg.timeout_ms;
        let branch_points = sandbox.branch_points(&put.source);
        let mut outcome = PipelineOutcome::empty(Technique::DiffPrompt, OutcomeStatus::NotFoundAttemptsExhausted);
        let mut queue: VecDeque<TestInput> = VecDeque::new();
        let mut tried: Vec<Vec<Value>> = Vec::new();
        let mut coverage = CoverageSet::default();
        let (mut attempts, mut discards, mut empty_batches, mut stale) = (0usize, 0usize, 0usize, 0usize);

        loop {
            let Some(input) = queue.pop_front() else {
                match self.generate_inputs(put) {
                    Ok(batch) => {
                        let fresh: Vec<TestInput> =
                            batch.into_iter().filter(|i| !tried.iter().any(|t| same_args(t, &i.args))).collect();
                        if fresh.is_empty() {
                            empty_batches += 1;
                        } else {
                            empty_batches = 0;
                            queue.extend(fresh);
                        }
                    }
                    Err(Error::NoParsableInputs { .. }) => empty_batches += 1,
                    Err(e) => return Err(e),
                }
                if empty_batches >= 2 {
                    outcome.status = OutcomeStatus::NotFoundInputsExhausted;
                    return Ok(outcome);
                }
                continue;
            };
            tried.push(input.args.clone());

            let mut record = AttemptRecord {
                input: input.clone(),
                ref_outputs: Vec::new(),
                put_output: None,
                disposition: Disposition::Illegal,
                counted: self.cfg.strict_attempts,
                coverage_total: coverage.len(),
            };

            let mut agreed = None;
            if put.check_args(&input.args).is_err() {
                record.ref_outputs = vec![ExecutionResult::illegal_input(); refs.len()];
            } else {
                let (consensus, results) = consensus_expected(&input, refs, sandbox, timeout)?;
                record.ref_outputs = results;
                match consensus {
                    Consensus::Agreed(out) => agreed = Some(out),
                    Consensus::NoConsensus(d) => record.disposition = d,
                }
            }

            if let Some(expected) = agreed {
                let observed = sandbox.execute(&put.source, &put.entry_point, &input.args, timeout)?;
                let put_out = observed.output();
                record.put_output = Some(observed.clone());
                if put_out == Output::Illegal {
                    record.disposition = Disposition::Illegal;
                } else {
                    record.counted = true;
                    if !output_equal(&put_out, &expected) {
                        let again = sandbox.execute(&put.source, &put.entry_point, &input.args, timeout)?.output();
                        let stable =
                            output_equal(&put_out, &again) || (put_out == Output::Timeout && again == Output::Timeout);
                        if !stable {
                            return Err(Error::NondeterministicSubject { input: input.render_call(&put.entry_point) });
                        }
                        record.disposition = Disposition::ConsensusDiff;
                        outcome.test_case = Some(TestCaseRecord {
                            args: input.args.clone(),
                            expected: expected.to_expected().expect("consensus is a value or exception"),
                        });
                        outcome.status = OutcomeStatus::Found;
                        outcome.trace.push(record);
                        return Ok(outcome);
                    }
                    record.disposition = Disposition::ConsensusSame;
                    let new_arcs = observed.coverage.as_ref().map_or(0, |c| coverage.absorb(c));
                    record.coverage_total = coverage.len();
                    stale = if new_arcs > 0 { 0 } else { stale + 1 };
                }
            }

            let same = record.disposition == Disposition::ConsensusSame;
            if record.counted {
                attempts += 1;
            } else {
                discards += 1;
            }
            outcome.trace.push(record);

            if same && (coverage_complete(&branch_points, &coverage) || stale >= self.cfg.saturation_window) {
                outcome.status = OutcomeStatus::NotFoundCoverageSaturated;
                return Ok(outcome);
            }
            if attempts >= self.cfg.k_attempts || discards >= self.cfg.max_discards() {
                outcome.status = OutcomeStatus::NotFoundAttemptsExhausted;
                return Ok(outcome);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_call_lines() {
        let (args, warnings) = parse_inputs("gcd(12,20)\ngcd(7,3)\ngcd(0,0)", "gcd");
        assert_eq!(args, vec![vec![json!(12), json!(20)], vec![json!(7), json!(3)], vec![json!(0), json!(0)]]);
        assert_eq!(warnings, 0);
    }

    #[test]
    fn dedups_preserving_order() {
        let (args, _) = parse_inputs("1. gcd(12, 20)\n2. gcd(5, 5)\n3. gcd(12,20)", "gcd");
        assert_eq!(args, vec![vec![json!(12), json!(20)], vec![json!(5), json!(5)]]);
        let (floats, _) = parse_inputs("f(1)\nf(1.0)", "f");
        assert_eq!(floats.len(), 1, "1 and 1.0 are the same input to Python");
    }

    #[test]
    fn parses_json_form() {
        let (args, _) = parse_inputs("[[12,20],[100,8]]", "gcd");
        assert_eq!(args, vec![vec![json!(12), json!(20)], vec![json!(100), json!(8)]]);
        let fenced = "Here you go:\n```json\n[[1, 2]]\n```";
        assert_eq!(parse_inputs(fenced, "gcd").0, vec![vec![json!(1), json!(2)]]);
    }

    #[test]
    fn counts_malformed_lines() {
        let (args, warnings) = parse_inputs("gcd(a, b)\ngcd(1, 2)\nsome prose\ngcd(3,", "gcd");
        assert_eq!(args, vec![vec![json!(1), json!(2)]]);
        assert_eq!(warnings, 2);
        assert_eq!(parse_inputs("gcd(x)", "gcd"), (vec![], 1));
    }

    #[test]
    fn technique_and_status_names() {
        assert_eq!("base_chatgpt".parse::<Technique>().unwrap(), Technique::BaseChatGpt);
        assert!("pynguin".parse::<Technique>().is_err());
        assert_eq!(
            serde_json::to_value(OutcomeStatus::NotFoundCoverageSaturated).unwrap(),
            json!(OutcomeStatus::NotFoundCoverageSaturated.as_str())
        );
    }

    #[test]
    fn coverage_completeness() {
        let bp = BTreeSet::from([2]);
        let mut cov = CoverageSet::default();
        cov.arcs.extend([(1, 2), (2, 3)]);
        assert!(!coverage_complete(&bp, &cov));
        cov.arcs.insert((2, 5));
        assert!(coverage_complete(&bp, &cov));
        assert!(!coverage_complete(&BTreeSet::new(), &cov));
    }
}
