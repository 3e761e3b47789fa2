//! `difforacle`: find failure-inducing test cases with Differential
//! Prompting, classify test cases against a patched program, and evaluate
//! whole corpora.
//!
//! Exit status: 0 when a test case was found (or the command succeeded),
//! 2 when none was found, 1 on any error including usage errors.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use difforacle::llm::{Backend, Cassette, HttpBackend, Llm};
use difforacle::metrics::{
    load_corpus, read_tests, regenerate_report, run_corpus, CorpusEntry, EvalConfig, LlmSource, SubjectMeta,
};
use difforacle::pipeline::differential_prompting;
use difforacle::sandbox::{PythonSandbox, Sandbox};
use difforacle::taxonomy::{classify, ProgramUnderTest, TestCase};
use difforacle::testgen::Technique;
use difforacle::Error;

use config::{FileConfig, Overrides, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "difforacle",
    version,
    about = "Find failure-inducing test cases by differential testing against LLM-synthesized reference versions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file (TOML); defaults to ./difforacle.toml when present
    #[arg(long, global = true, value_name = "FILE", env = "DIFFORACLE_CONFIG")]
    config: Option<PathBuf>,

    /// Chat model name
    #[arg(long, global = true, value_name = "NAME", env = "DIFFORACLE_MODEL")]
    model: Option<String>,

    /// Sampling temperature for intention inference [default: 0.2]
    #[arg(long, global = true, value_name = "T", env = "DIFFORACLE_TEMPERATURE_INTENT")]
    temperature_intent: Option<f64>,

    /// Sampling temperature for reference, input and baseline prompts [default: 1.0]
    #[arg(long, global = true, value_name = "T", env = "DIFFORACLE_TEMPERATURE_GEN")]
    temperature_gen: Option<f64>,

    /// Number of reference versions to synthesize, at least 2 [default: 2]
    #[arg(long, global = true, value_name = "N", env = "DIFFORACLE_N_VERSIONS")]
    n_versions: Option<usize>,

    /// Maximum consensus-reaching attempts per run [default: 10]
    #[arg(long, global = true, value_name = "K", env = "DIFFORACLE_K")]
    k: Option<usize>,

    /// Per-execution timeout in milliseconds [default: 5000]
    #[arg(long, global = true, value_name = "MS", env = "DIFFORACLE_TIMEOUT_MS")]
    timeout_ms: Option<u64>,

    /// Record model traffic: a cassette file for `find`, a cassette directory for `eval`
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "replay")]
    record: Option<PathBuf>,

    /// Answer from recorded cassettes only (file for `find`, directory for `eval`); no network
    #[arg(long, global = true, value_name = "PATH")]
    replay: Option<PathBuf>,

    /// Parallel evaluation workers, one sandbox each [default: 1]
    #[arg(long, global = true, value_name = "N", env = "DIFFORACLE_WORKERS")]
    workers: Option<usize>,

    /// Output directory for outcomes, artifacts and reports [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Directory of prompt templates overriding the built-in ones by file name
    #[arg(long, global = true, value_name = "DIR", env = "DIFFORACLE_TEMPLATES")]
    templates: Option<PathBuf>,

    /// Python interpreter running the sandbox harness [default: python3]
    #[arg(long, global = true, value_name = "PATH", env = "DIFFORACLE_PYTHON")]
    python: Option<String>,

    /// Base URL of the OpenAI-compatible chat API
    #[arg(long, global = true, value_name = "URL", env = "DIFFORACLE_BASE_URL")]
    base_url: Option<String>,

    /// Accepted for reproducibility bookkeeping; the pipeline itself draws no random numbers, so only --replay makes runs deterministic
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search for a failure-inducing test case of one program
    Find {
        /// Subject directory (buggy.src + meta.json), or a source file with meta.json beside it
        subject: PathBuf,
    },
    /// Evaluate techniques over a corpus and write report files
    Eval {
        /// Corpus directory: <id>/{buggy.src, patched.src, tests.json, meta.json}
        corpus: PathBuf,
        /// Techniques to run, comma-separated: diffprompt, base_chatgpt [default: both]
        #[arg(long, value_name = "NAME", value_delimiter = ',', value_parser = parse_technique)]
        technique: Vec<Technique>,
        /// Runs per subject and technique [default: 10]
        #[arg(long, value_name = "R", env = "DIFFORACLE_RUNS")]
        runs: Option<usize>,
    },
    /// Classify test cases against a buggy/patched program pair
    Classify {
        /// Subject directory with buggy.src, patched.src and meta.json
        subject: PathBuf,
        /// JSON file: a list of {"args": [...], "expected": ...}
        tests: PathBuf,
    },
    /// Rebuild report files from the cell records of an earlier evaluation
    Report {
        /// Output directory of the evaluation
        dir: PathBuf,
    },
}

fn parse_technique(s: &str) -> Result<Technique, String> {
    s.parse()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let c = cli.common;
    let file = FileConfig::load(c.config.as_deref())?;
    let runs = match &cli.command {
        Command::Eval { runs, .. } => *runs,
        _ => None,
    };
    let settings = Settings::resolve(
        Overrides {
            model: c.model,
            temperature_intent: c.temperature_intent,
            temperature_gen: c.temperature_gen,
            n_versions: c.n_versions,
            k: c.k,
            timeout_ms: c.timeout_ms,
            workers: c.workers,
            runs,
            templates: c.templates,
            python: c.python,
            base_url: c.base_url,
        },
        file,
    )?;
    if let Some(seed) = c.seed {
        log::debug!("seed {seed} noted; model sampling is external");
    }
    let out = c.out.unwrap_or_else(|| PathBuf::from("out"));
    match cli.command {
        Command::Find { subject } => cmd_find(&subject, &settings, c.record, c.replay, &out),
        Command::Eval { corpus, technique, .. } => cmd_eval(&corpus, technique, &settings, c.record, c.replay, &out),
        Command::Classify { subject, tests } => cmd_classify(&subject, &tests, &settings),
        Command::Report { dir } => {
            print!("{}", regenerate_report(&dir)?.to_markdown());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn sandbox(settings: &Settings) -> PythonSandbox {
    match &settings.python {
        Some(p) => PythonSandbox::with_interpreter(p.clone()),
        None => PythonSandbox::new(),
    }
}

fn backend(settings: &Settings) -> Result<Arc<dyn Backend>> {
    let b = HttpBackend::from_env(settings.base_url.clone())
        .ok_or_else(|| anyhow!("DIFFORACLE_API_KEY is not set (use --replay to run from recorded cassettes)"))?;
    Ok(Arc::new(b))
}

/// The buggy program of a subject and, when present, its patched version.
fn load_subject(path: &Path) -> Result<(ProgramUnderTest, Option<ProgramUnderTest>)> {
    let (dir, source_path) = if path.is_dir() {
        (path.to_path_buf(), path.join("buggy.src"))
    } else if path.is_file() {
        (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
    } else {
        bail!("{}: no such subject", path.display());
    };
    let id = if path.is_dir() { path.file_name() } else { path.file_stem() }
        .and_then(|n| n.to_str())
        .unwrap_or("subject")
        .to_string();
    let meta = SubjectMeta::load(&dir.join("meta.json"))?;
    let source = std::fs::read_to_string(&source_path).with_context(|| format!("reading {}", source_path.display()))?;
    let patched_path = dir.join("patched.src");
    let patched = if path.is_dir() && patched_path.exists() {
        let text =
            std::fs::read_to_string(&patched_path).with_context(|| format!("reading {}", patched_path.display()))?;
        Some(meta.program(&format!("{id}.patched"), text))
    } else {
        None
    };
    Ok((meta.program(&id, source), patched))
}

fn cmd_find(
    subject: &Path,
    settings: &Settings,
    record: Option<PathBuf>,
    replay: Option<PathBuf>,
    out: &Path,
) -> Result<ExitCode> {
    let (put, patched) = load_subject(subject)?;
    let llm = match (record, replay) {
        (Some(path), _) => Llm::record(backend(settings)?, Cassette::create(&path)?),
        (None, Some(path)) => Llm::replay(Cassette::load(&path)?),
        (None, None) => Llm::passthrough(backend(settings)?),
    };
    let mut sb = sandbox(settings);
    put.validate(&mut sb)?;
    let dir = out.join(&put.id);
    let report = differential_prompting(
        &put,
        &llm,
        &settings.prompts,
        settings.generation,
        settings.testgen,
        &mut sb,
        Some(&dir),
    )?;
    let Some(record) = report.outcome.test_case else {
        println!("no failure-inducing test case found ({})", report.outcome.status.as_str());
        return Ok(ExitCode::from(2));
    };
    let test = TestCase::from(record);
    println!("{}", test.render_assert(&put.entry_point));
    if let Some(patched) = patched {
        match classify(&test, &put, &patched, &mut sb, settings.testgen.timeout_ms) {
            Ok(c) => eprintln!("verdict against {}: {}", patched.id, c.label()),
            Err(e) => eprintln!("verdict against {}: {e}", patched.id),
        }
    }
    eprintln!("outcome written to {}", dir.join("outcome.json").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(
    corpus_dir: &Path,
    techniques: Vec<Technique>,
    settings: &Settings,
    record: Option<PathBuf>,
    replay: Option<PathBuf>,
    out: &Path,
) -> Result<ExitCode> {
    let corpus = load_corpus(corpus_dir)?;
    let mut techniques = if techniques.is_empty() { Technique::ALL.to_vec() } else { techniques };
    techniques.sort();
    techniques.dedup();
    let source = match (record, replay) {
        (Some(dir), _) => LlmSource::Record { backend: backend(settings)?, cassette_dir: dir },
        (None, Some(dir)) => {
            if !dir.is_dir() {
                bail!("{}: cassette directory does not exist", dir.display());
            }
            LlmSource::Replay { cassette_dir: dir }
        }
        (None, None) => LlmSource::Live { backend: backend(settings)? },
    };
    let cfg = EvalConfig {
        runs: settings.runs,
        techniques,
        generation: settings.generation,
        testgen: settings.testgen,
        claim_rules: settings.claim_rules.clone(),
        workers: settings.workers,
    };
    let factory = || -> difforacle::Result<Box<dyn Sandbox>> {
        let mut sb = sandbox(settings);
        sb.start()?;
        Ok(Box::new(sb))
    };
    let report = run_corpus(&corpus, &cfg, &settings.prompts, &source, &factory, Some(out))?;
    print!("{}", report.to_markdown());
    eprintln!("report written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_classify(subject: &Path, tests: &Path, settings: &Settings) -> Result<ExitCode> {
    let entry = CorpusEntry::load(subject)?;
    let tests = read_tests(tests)?;
    let mut sb = sandbox(settings);
    for t in &tests {
        let label = match classify(t, &entry.buggy, &entry.patched, &mut sb, settings.testgen.timeout_ms) {
            Ok(c) => c.label().to_string(),
            Err(Error::AmbiguousVerdict) => "ambiguous".to_string(),
            Err(e) => return Err(e.into()),
        };
        println!("{label}\t{}", t.render_assert(&entry.buggy.entry_point));
    }
    Ok(ExitCode::SUCCESS)
}
