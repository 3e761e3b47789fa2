//! Re-records every cassette under `fixtures/cassettes/` from the scripted
//! transcripts in `fixtures/transcripts/`, by driving the real pipeline
//! with a scripted backend. Also refreshes `fixtures/golden/`.
//!
//!     cargo run -p difforacle --example record_fixtures
//!
//! Fails if a script is not consumed exactly or a replay diverges from the
//! recording.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use difforacle::baseline::{base_chatgpt_find, BaselineDisposition, ClaimRules};
use difforacle::generator::{GenerationConfig, Generator, StrawmanOutcome};
use difforacle::llm::{Cassette, Llm, PromptBook, ScriptedBackend};
use difforacle::metrics::{load_corpus, run_corpus, write_report, EvalConfig, LlmSource, SubjectMeta};
use difforacle::pipeline::differential_prompting;
use difforacle::sandbox::{PythonSandbox, Sandbox};
use difforacle::taxonomy::ProgramUnderTest;
use difforacle::testgen::{Technique, TestGenConfig};
use serde_json::Value;

type BoxError = Box<dyn std::error::Error>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn transcript(name: &str) -> Result<Value, BoxError> {
    Ok(serde_json::from_str(&fs::read_to_string(fixtures().join("transcripts").join(format!("{name}.json")))?)?)
}

fn responses(v: &Value) -> Vec<String> {
    v["responses"].as_array().expect("responses").iter().map(|r| r.as_str().expect("string").to_string()).collect()
}

fn subject(id: &str) -> Result<ProgramUnderTest, BoxError> {
    let dir = fixtures().join(id);
    let meta = SubjectMeta::load(&dir.join("meta.json"))?;
    Ok(meta.program(id, fs::read_to_string(dir.join("buggy.src"))?))
}

fn check_exhausted(script: &ScriptedBackend, what: &str) -> Result<(), BoxError> {
    match script.remaining() {
        0 => Ok(()),
        n => Err(format!("{what}: {n} scripted responses were never requested").into()),
    }
}

fn record_find(name: &str) -> Result<(), BoxError> {
    let t = transcript(name)?;
    let put = subject(t["subject"].as_str().expect("subject"))?;
    let path = fixtures().join("cassettes").join(format!("{name}.jsonl"));
    let script = Arc::new(ScriptedBackend::new(responses(&t)));
    let prompts = PromptBook::default();
    let mut sb = PythonSandbox::new();
    let run = |llm: &Llm, sb: &mut dyn Sandbox| {
        differential_prompting(&put, llm, &prompts, GenerationConfig::default(), TestGenConfig::default(), sb, None)
    };
    let recorded = run(&Llm::record(script.clone(), Cassette::create(&path)?), &mut sb)?;
    check_exhausted(&script, name)?;
    let replayed = run(&Llm::replay(Cassette::load(&path)?), &mut sb)?;
    if replayed.outcome != recorded.outcome {
        return Err(format!("{name}: replay diverged").into());
    }
    println!("{name}: {}", recorded.outcome.status.as_str());
    Ok(())
}

fn record_no_bug() -> Result<(), BoxError> {
    let t = transcript("no_bug")?;
    let put = subject(t["subject"].as_str().expect("subject"))?;
    let path = fixtures().join("cassettes").join("no_bug.jsonl");
    let script = Arc::new(ScriptedBackend::new(responses(&t)));
    let llm = Llm::record(script.clone(), Cassette::create(&path)?);
    let prompts = PromptBook::default();
    let rules = ClaimRules::default();
    let base = base_chatgpt_find(&put, &llm, &prompts, &rules)?;
    let straw = Generator::new(&llm, &prompts, GenerationConfig::default()).strawman_generate(
        &put,
        &rules,
        &mut PythonSandbox::new(),
    )?;
    check_exhausted(&script, "no_bug")?;
    if base.disposition != Some(BaselineDisposition::NoBugClaimed) || straw.outcome != StrawmanOutcome::NoBugClaimed {
        return Err("no_bug: expected both baselines to claim no bug".into());
    }
    println!("no_bug: no_bug_claimed");
    Ok(())
}

fn record_eval() -> Result<(), BoxError> {
    let t = transcript("eval")?;
    let corpus = load_corpus(&fixtures().join(t["corpus"].as_str().expect("corpus")))?;
    let runs = t["runs"].as_u64().expect("runs") as usize;
    // cells run in subject, technique, run order with a single worker
    let mut expected = Vec::new();
    for entry in &corpus {
        for technique in Technique::ALL {
            for run in 1..=runs {
                expected.push((entry.id.clone(), technique.as_str().to_string(), run));
            }
        }
    }
    let cells = t["cells"].as_array().expect("cells");
    let listed: Vec<_> = cells
        .iter()
        .map(|c| {
            (
                c["subject"].as_str().unwrap().to_string(),
                c["technique"].as_str().unwrap().to_string(),
                c["run"].as_u64().unwrap() as usize,
            )
        })
        .collect();
    if listed != expected {
        return Err("eval transcript cells must be listed in execution order".into());
    }
    let script = Arc::new(ScriptedBackend::new(cells.iter().flat_map(responses)));
    let cassette_dir = fixtures().join("cassettes").join("eval");
    if cassette_dir.exists() {
        fs::remove_dir_all(&cassette_dir)?;
    }
    let cfg = EvalConfig { runs, ..EvalConfig::default() };
    let prompts = PromptBook::default();
    let factory = || -> difforacle::Result<Box<dyn Sandbox>> { Ok(Box::new(PythonSandbox::new())) };
    let source = LlmSource::Record { backend: script.clone(), cassette_dir: cassette_dir.clone() };
    let recorded = run_corpus(&corpus, &cfg, &prompts, &source, &factory, None)?;
    check_exhausted(&script, "eval")?;
    if let Some(bad) = recorded.cells.iter().find(|c| c.is_error()) {
        return Err(format!("eval: cell {}/{}/{} errored", bad.subject, bad.technique, bad.run).into());
    }
    let replayed = run_corpus(&corpus, &cfg, &prompts, &LlmSource::Replay { cassette_dir }, &factory, None)?;
    if replayed != recorded {
        return Err("eval: replay diverged".into());
    }
    let golden = fixtures().join("golden");
    fs::create_dir_all(&golden)?;
    write_report(&recorded, &golden)?;
    print!("{}", recorded.to_markdown());
    Ok(())
}

fn main() -> Result<(), BoxError> {
    for name in ["gcd_buggy", "gcd_correct", "gcd_shared_bug"] {
        record_find(name)?;
    }
    record_no_bug()?;
    record_eval()
}
