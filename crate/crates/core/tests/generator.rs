use std::sync::Arc;

use difforacle::baseline::ClaimRules;
use difforacle::generator::{GenerationConfig, Generator, StrawmanOutcome};
use difforacle::llm::{Cassette, CassetteMode, Llm, PromptBook, ScriptedBackend};
use difforacle::sandbox::{Sandbox, SandboxError, SyntaxCheck};
use difforacle::taxonomy::{defines_function, ExecutionResult, Intention, ProgramUnderTest, TypeTag};
use difforacle::{Error, Value};

/// Accepts anything without an obviously broken signature.
struct LenientSandbox;

impl Sandbox for LenientSandbox {
    fn syntax_check(&mut self, source: &str, _entry: &str) -> Result<SyntaxCheck, SandboxError> {
        let ok = !source.contains("(:");
        Ok(SyntaxCheck { ok, diagnostic: (!ok).then(|| "invalid syntax".into()), warnings: vec![] })
    }

    fn execute(&mut self, _: &str, _: &str, _: &[Value], _: u64) -> Result<ExecutionResult, SandboxError> {
        unreachable!("generation never executes")
    }
}

const BUGGY: &str = "def gcd(a, b):\n    if b == 0:\n        return a\n    else:\n        return gcd(a, a % b)\n";

fn put() -> ProgramUnderTest {
    ProgramUnderTest::new("gcd", BUGGY, "gcd", vec![TypeTag::Int, TypeTag::Int])
}

fn fenced(code: &str) -> String {
    format!("```python\n{code}\n```\n")
}

fn intention(raw: &str) -> Intention {
    Intention { text: "gcd of a and b".into(), put_id: "gcd".into(), raw_response: raw.into() }
}

#[test]
fn regenerates_until_enough_versions() {
    let one = fenced("def gcd(a, b):\n    return a if b == 0 else gcd(b, a % b)");
    let other = fenced("def my_gcd(a, b):\n    while b:\n        a, b = b, a % b\n    return a");
    let backend = Arc::new(ScriptedBackend::new([one, other]));
    let llm = Llm::passthrough(backend.clone());
    let prompts = PromptBook::default();
    let generator = Generator::new(&llm, &prompts, GenerationConfig::default());
    let refs = generator.generate_references(&intention(""), &put(), &mut LenientSandbox).unwrap();
    assert_eq!(backend.remaining(), 0, "one regeneration round");
    assert_eq!(refs.iter().map(|r| r.index).collect::<Vec<_>>(), vec![1, 2]);
    assert!(refs.iter().all(|r| r.compilable && defines_function(&r.source, "gcd")));
    assert!(refs[1].source.starts_with("def gcd(a, b):"));
}

#[test]
fn echoes_and_broken_versions_are_discarded() {
    let response = format!("{}{}", fenced(BUGGY.trim_end()), fenced("def gcd(:\n    pass"));
    let llm = Llm::passthrough(ScriptedBackend::new(vec![response; 4]));
    let prompts = PromptBook::default();
    let generator = Generator::new(&llm, &prompts, GenerationConfig::default());
    let err = generator.generate_references(&intention(""), &put(), &mut LenientSandbox).unwrap_err();
    assert!(matches!(err, Error::InsufficientVersions { wanted: 2, got: 0, rounds: 3 }), "{err}");
}

#[test]
fn reference_prompt_never_contains_the_put() {
    let backend =
        ScriptedBackend::new([fenced("def gcd(a, b):\n    return 1\n\n"), fenced("def gcd(a, b):\n    return 2")]);
    let llm = Llm::record(backend, Cassette::in_memory(CassetteMode::Record));
    let prompts = PromptBook::default();
    let generator = Generator::new(&llm, &prompts, GenerationConfig::default());
    generator.generate_references(&intention(""), &put(), &mut LenientSandbox).unwrap();
    let cassette = llm.cassette();
    for entry in cassette.entries() {
        assert_eq!(entry.request.messages.len(), 1);
        assert!(!entry.request.messages[0].content.contains("gcd(a, a % b)"));
    }
}

#[test]
fn shared_conversation_carries_the_intention_exchange() {
    let backend =
        ScriptedBackend::new([fenced("def gcd(a, b):\n    return 1"), fenced("def gcd(a, b):\n    return 2")]);
    let llm = Llm::record(backend, Cassette::in_memory(CassetteMode::Record));
    let prompts = PromptBook::default();
    let cfg = GenerationConfig { shared_conversation: true, ..GenerationConfig::default() };
    let generator = Generator::new(&llm, &prompts, cfg);
    generator.generate_references(&intention("Intention: gcd"), &put(), &mut LenientSandbox).unwrap();
    let cassette = llm.cassette();
    let messages = &cassette.entries()[0].request.messages;
    assert_eq!(messages.len(), 3);
    assert_eq!(messages[1].content, "Intention: gcd");
}

#[test]
fn infer_intention_takes_labelled_text() {
    let llm = Llm::passthrough(ScriptedBackend::new(["Intention: return the greatest common divisor of a and b."]));
    let prompts = PromptBook::default();
    let i = Generator::new(&llm, &prompts, GenerationConfig::default()).infer_intention(&put()).unwrap();
    assert_eq!(i.text, "return the greatest common divisor of a and b.");
    assert!(!i.is_low_confidence());

    let llm = Llm::passthrough(ScriptedBackend::new(["Intention:"]));
    let err = Generator::new(&llm, &prompts, GenerationConfig::default()).infer_intention(&put()).unwrap_err();
    assert!(matches!(err, Error::EmptyIntention));
}

#[test]
fn strawman_dispositions() {
    let prompts = PromptBook::default();
    let rules = ClaimRules::default();
    let run = |responses: Vec<String>| {
        let llm = Llm::passthrough(ScriptedBackend::new(responses));
        Generator::new(&llm, &prompts, GenerationConfig::default())
            .strawman_generate(&put(), &rules, &mut LenientSandbox)
            .unwrap()
    };
    let r = run(vec!["No bug is found in this program.".into()]);
    assert_eq!((r.outcome, r.versions.len()), (StrawmanOutcome::NoBugClaimed, 0));
    let r = run(vec!["More information is required.".into()]);
    assert_eq!(r.outcome, StrawmanOutcome::Inconclusive);
    let fixes = format!("{}{}", fenced("def gcd(a, b):\n    return 1"), fenced("def gcd(a, b):\n    return 2"));
    let r = run(vec!["Yes, there is a bug.".into(), fixes]);
    assert_eq!((r.outcome, r.versions.len()), (StrawmanOutcome::VersionsGenerated, 2));
    let r = run(vec!["Yes, there is a bug.".into(), "Swap the arguments.".into()]);
    assert_eq!(r.outcome, StrawmanOutcome::ExtractionFailed);
}
