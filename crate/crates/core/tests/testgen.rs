use std::collections::BTreeSet;

use difforacle::llm::{Llm, PromptBook, ScriptedBackend};
use difforacle::sandbox::{TableCase, TableProgram, TableSandbox};
use difforacle::taxonomy::{
    CoverageSet, ExecutionResult, Intention, Output, ProgramUnderTest, ReferenceVersion, TestInput, TypeTag,
};
use difforacle::testgen::{
    consensus_expected, Consensus, Disposition, OutcomeStatus, PipelineOutcome, TestCaseGenerator, TestGenConfig,
};
use difforacle::Error;
use serde_json::{json, Value};

fn ok(v: Value) -> ExecutionResult {
    ExecutionResult::ok(v)
}

fn arcs(pairs: &[(i64, i64)]) -> CoverageSet {
    let mut c = CoverageSet::default();
    c.arcs.extend(pairs.iter().copied());
    c
}

/// Table program over one-argument inputs `x -> f(x)`.
fn table(f: impl Fn(i64) -> ExecutionResult, inputs: impl IntoIterator<Item = i64>) -> TableProgram {
    let mut p = TableProgram::new("f");
    for x in inputs {
        p = p.case(vec![json!(x)], f(x));
    }
    p
}

fn put_of(p: &TableProgram) -> ProgramUnderTest {
    ProgramUnderTest::new("f", p.source(), "f", vec![TypeTag::Int])
}

fn refs_of(programs: &[TableProgram]) -> Vec<ReferenceVersion> {
    let intention = Intention { text: "double x".into(), put_id: "f".into(), raw_response: String::new() };
    programs
        .iter()
        .enumerate()
        .map(|(i, p)| ReferenceVersion {
            index: i + 1,
            source: p.source(),
            entry_point: "f".into(),
            intention: intention.clone(),
            compilable: true,
        })
        .collect()
}

fn calls(xs: impl IntoIterator<Item = i64>) -> String {
    xs.into_iter().map(|x| format!("f({x})")).collect::<Vec<_>>().join("\n")
}

fn run(
    put: &TableProgram,
    refs: &[TableProgram],
    responses: Vec<String>,
    cfg: TestGenConfig,
) -> Result<PipelineOutcome, Error> {
    let llm = Llm::passthrough(ScriptedBackend::new(responses));
    let prompts = PromptBook::default();
    TestCaseGenerator::new(&llm, &prompts, cfg).find_failure_inducing(
        &put_of(put),
        &refs_of(refs),
        &mut TableSandbox::new(),
    )
}

fn double(x: i64) -> ExecutionResult {
    ok(json!(2 * x))
}

#[test]
fn finds_first_differing_consensus_input() {
    let put = table(|x| if x == 3 { ok(json!(7)) } else { double(x) }, 0..10);
    let refs = [table(double, 0..10), table(double, 0..10)];
    let out = run(&put, &refs, vec![calls([1, 2, 3, 4])], TestGenConfig::default()).unwrap();
    assert_eq!(out.status, OutcomeStatus::Found);
    let tc = out.test_case.unwrap();
    assert_eq!((tc.args, tc.expected), (vec![json!(3)], json!(6)));
    let dispositions: Vec<Disposition> = out.trace.iter().map(|a| a.disposition).collect();
    assert_eq!(dispositions, vec![Disposition::ConsensusSame, Disposition::ConsensusSame, Disposition::ConsensusDiff]);
    assert!(out.trace.iter().all(|a| a.ref_outputs.len() == 2));
}

#[test]
fn expected_exception_becomes_sidecar() {
    let put = table(|x| if x == 0 { ok(json!(0)) } else { double(x) }, 0..3);
    let raising = |x| if x == 0 { ExecutionResult::exception("ZeroDivisionError") } else { double(x) };
    let refs = [table(raising, 0..3), table(raising, 0..3)];
    let out = run(&put, &refs, vec![calls([0])], TestGenConfig::default()).unwrap();
    assert_eq!(out.test_case.unwrap().expected, json!({"__t": "exception", "v": "ZeroDivisionError"}));
}

#[test]
fn disagreement_timeouts_and_illegal_inputs_do_not_count() {
    let put = table(|x| if x == 9 { ok(json!(0)) } else { double(x) }, 0..10);
    let mut r1 = table(double, 0..10);
    let mut r2 = table(|x| if x == 1 { ok(json!(5)) } else { double(x) }, 0..10);
    r1.cases[2].results = vec![ExecutionResult::timeout(5000)];
    r2.cases[4].results = vec![ExecutionResult::illegal_input()];
    let response = "f(1)\nf(2)\nf(4)\nf('x')\nf(9)".to_string();
    let out = run(&put, &[r1, r2], vec![response], TestGenConfig::default()).unwrap();
    assert_eq!(out.status, OutcomeStatus::Found);
    let d: Vec<Disposition> = out.trace.iter().map(|a| a.disposition).collect();
    assert_eq!(
        d,
        vec![
            Disposition::NoConsensus,
            Disposition::Timeout,
            Disposition::Illegal,
            Disposition::Illegal,
            Disposition::ConsensusDiff
        ]
    );
    assert_eq!(out.attempts(), 1);
    assert_eq!(out.trace.iter().filter(|a| a.counted).count(), 1);
}

#[test]
fn strict_mode_counts_every_input() {
    let put = table(double, 0..20);
    let refs = [table(double, 0..20), table(|x| ok(json!(x)), 0..20)];
    let cfg = TestGenConfig { k_attempts: 3, strict_attempts: true, ..TestGenConfig::default() };
    let out = run(&put, &refs, vec![calls(1..20)], cfg).unwrap();
    assert_eq!(out.status, OutcomeStatus::NotFoundAttemptsExhausted);
    assert_eq!(out.trace.len(), 3);
}

#[test]
fn discards_are_capped() {
    let put = table(double, 0..200);
    let refs = [table(double, 0..200), table(|x| ok(json!(x)), 0..200)];
    let cfg = TestGenConfig { k_attempts: 2, ..TestGenConfig::default() };
    let batches: Vec<String> = (0..5).map(|b| calls(b * 10 + 1..b * 10 + 11)).collect();
    let out = run(&put, &refs, batches, cfg).unwrap();
    assert_eq!(out.status, OutcomeStatus::NotFoundAttemptsExhausted);
    assert_eq!(out.trace.len(), 20);
    assert_eq!(out.attempts(), 0);
}

#[test]
fn attempts_are_capped_at_k_with_fresh_batches() {
    // an unreachable branch point and fresh arcs every time: only k stops it
    let mut put = TableProgram::new("f");
    for x in 0..40 {
        put = put.case(vec![json!(x)], double(x).with_coverage(arcs(&[(x, x + 100)])));
    }
    put.branch_points = BTreeSet::from([1000]);
    let refs = [table(double, 0..40), table(double, 0..40)];
    let batches = vec![calls(0..4), calls(4..8), calls(8..12), calls(12..16)];
    let out = run(&put, &refs, batches, TestGenConfig::default()).unwrap();
    assert_eq!(out.status, OutcomeStatus::NotFoundAttemptsExhausted);
    assert_eq!(out.attempts(), 10);
    let sizes: Vec<usize> = out.trace.iter().map(|a| a.coverage_total).collect();
    assert_eq!(sizes, (1..=10).collect::<Vec<_>>());
}

#[test]
fn full_branch_coverage_saturates_immediately() {
    let mut put = TableProgram::new("f");
    put.branch_points = BTreeSet::from([2]);
    put = put
        .case(vec![json!(1)], double(1).with_coverage(arcs(&[(1, 2), (2, 3)])))
        .case(vec![json!(2)], double(2).with_coverage(arcs(&[(1, 2), (2, 5)])));
    let refs = [table(double, 0..5), table(double, 0..5)];
    let out = run(&put, &refs, vec![calls([1, 2, 3, 4])], TestGenConfig::default()).unwrap();
    assert_eq!(out.status, OutcomeStatus::NotFoundCoverageSaturated);
    assert_eq!(out.trace.len(), 2);
}

#[test]
fn stale_coverage_saturates_after_window() {
    let mut put = TableProgram::new("f");
    put.branch_points = BTreeSet::from([2]);
    for x in 0..20 {
        put = put.case(vec![json!(x)], double(x).with_coverage(arcs(&[(1, 2), (2, 3)])));
    }
    let refs = [table(double, 0..20), table(double, 0..20)];
    let out = run(&put, &refs, vec![calls(0..20)], TestGenConfig::default()).unwrap();
    assert_eq!(out.status, OutcomeStatus::NotFoundCoverageSaturated);
    // the first input adds arcs; five stale ones follow
    assert_eq!(out.trace.len(), 6);
}

#[test]
fn references_sharing_the_bug_never_produce_a_false_finding() {
    let buggy = |x: i64| ok(json!(x * x));
    let put = table(buggy, 0..20);
    let refs = [table(buggy, 0..20), table(buggy, 0..20)];
    let out = run(&put, &refs, vec![calls(0..20)], TestGenConfig::default()).unwrap();
    assert_eq!(out.status, OutcomeStatus::NotFoundCoverageSaturated);
    assert!(out.test_case.is_none());
    assert!(out.trace.iter().all(|a| a.disposition == Disposition::ConsensusSame));
}

#[test]
fn unparsable_or_repeated_batches_exhaust_inputs() {
    let put = table(double, 0..5);
    let refs = [table(double, 0..5), table(|x| ok(json!(x)), 0..5)];
    let out = run(&put, &refs, vec!["I cannot help.".into(), "Nothing.".into()], TestGenConfig::default()).unwrap();
    assert_eq!(out.status, OutcomeStatus::NotFoundInputsExhausted);
    assert!(out.trace.is_empty());

    let out = run(&put, &refs, vec![calls([1]), calls([1]), "f(a)".into()], TestGenConfig::default()).unwrap();
    assert_eq!(out.status, OutcomeStatus::NotFoundInputsExhausted);
    assert_eq!(out.trace.len(), 1);
}

#[test]
fn nondeterministic_put_is_rejected() {
    let mut put = table(double, 0..3);
    put.cases.push(TableCase { args: vec![json!(5)], results: vec![ok(json!(1)), ok(json!(2))] });
    let refs = [table(double, 0..6), table(double, 0..6)];
    let err = run(&put, &refs, vec![calls([5])], TestGenConfig::default()).unwrap_err();
    assert!(matches!(err, Error::NondeterministicSubject { ref input } if input == "f(5)"), "{err}");
}

#[test]
fn consistently_timing_out_put_is_a_finding() {
    let put = table(|x| if x == 2 { ExecutionResult::timeout(5000) } else { double(x) }, 0..3);
    let refs = [table(double, 0..3), table(double, 0..3)];
    let out = run(&put, &refs, vec![calls([2])], TestGenConfig::default()).unwrap();
    assert_eq!(out.status, OutcomeStatus::Found);
    assert_eq!(out.test_case.unwrap().expected, json!(4));
}

#[test]
fn llm_failures_propagate() {
    let put = table(double, 0..3);
    let refs = [table(double, 0..3), table(double, 0..3)];
    let err = run(&put, &refs, vec![], TestGenConfig::default()).unwrap_err();
    assert_eq!(err.kind(), "HttpError");
}

#[test]
fn consensus_needs_every_reference() {
    let input = TestInput::manual(vec![json!(7)]);
    let mut sb = TableSandbox::new();
    let agree = refs_of(&[table(double, 0..10), table(double, 0..10)]);
    let (c, results) = consensus_expected(&input, &agree, &mut sb, 100).unwrap();
    assert_eq!(c, Consensus::Agreed(Output::Value(json!(14))));
    assert_eq!(results.len(), 2);
    let split = refs_of(&[table(double, 0..10), table(double, 0..10), table(|x| ok(json!(x)), 0..10)]);
    let (c, results) = consensus_expected(&input, &split, &mut sb, 100).unwrap();
    assert_eq!(c, Consensus::NoConsensus(Disposition::NoConsensus));
    assert_eq!(results.len(), 3);
}

#[test]
fn rejects_fewer_than_two_references() {
    let put = table(double, 0..3);
    let err = run(&put, &[table(double, 0..3)], vec![], TestGenConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn outcome_round_trips_through_json() {
    let put = table(|x| if x == 1 { ok(json!(0)) } else { double(x) }, 0..3);
    let refs = [table(double, 0..3), table(double, 0..3)];
    let out = run(&put, &refs, vec![calls([0, 1])], TestGenConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    let back = PipelineOutcome::read(&dir.path().join("outcome.json")).unwrap();
    assert_eq!(back, out);
    let raw: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("outcome.json")).unwrap()).unwrap();
    assert_eq!(raw["technique"], "diffprompt");
    assert_eq!(raw["status"], "found");
    assert_eq!(raw["test_case"], json!({"args": [1], "expected": 2}));
}
