use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::corpus::CorpusEntry;
use super::report::{IngestedSummary, Report};
use crate::baseline::{base_chatgpt_find, BaselineDisposition, ClaimRules};
use crate::generator::{is_good_reference, GenerationConfig};
use crate::llm::{Backend, Cassette, CassetteMode, Llm, PromptBook};
use crate::pipeline::differential_prompting;
use crate::sandbox::Sandbox;
use crate::taxonomy::{classify, Classification, ReferenceVersion, TestCase, TestCaseRecord};
use crate::testgen::{OutcomeStatus, PipelineOutcome, Technique, TestGenConfig};
use crate::{Error, Result};

/// Builds one sandbox per worker.
pub type SandboxFactory<'a> = dyn Fn() -> Result<Box<dyn Sandbox>> + Sync + 'a;

/// Where each cell's model answers come from. Cassettes live at
/// `<cassette_dir>/<subject>/<technique>/run-<r>.jsonl`.
#[derive(Clone)]
pub enum LlmSource {
    Replay { cassette_dir: PathBuf },
    Record { backend: Arc<dyn Backend>, cassette_dir: PathBuf },
    Live { backend: Arc<dyn Backend> },
}

pub fn cassette_path(dir: &Path, subject: &str, technique: Technique, run: usize) -> PathBuf {
    dir.join(subject).join(technique.as_str()).join(format!("run-{run}.jsonl"))
}

/// Directory holding a cell's persisted records under an output root.
pub fn cell_dir(out: &Path, subject: &str, technique: Technique, run: usize) -> PathBuf {
    out.join("runs").join(subject).join(technique.as_str()).join(format!("run-{run}"))
}

impl LlmSource {
    fn open(&self, subject: &str, technique: Technique, run: usize) -> Result<Llm> {
        Ok(match self {
            LlmSource::Replay { cassette_dir } => {
                let path = cassette_path(cassette_dir, subject, technique, run);
                // a missing cassette surfaces as a miss on the first request
                let cassette =
                    if path.exists() { Cassette::load(&path)? } else { Cassette::in_memory(CassetteMode::Replay) };
                Llm::replay(cassette)
            }
            LlmSource::Record { backend, cassette_dir } => {
                let path = cassette_path(cassette_dir, subject, technique, run);
                Llm::record(backend.clone(), Cassette::create(&path)?)
            }
            LlmSource::Live { backend } => Llm::passthrough(backend.clone()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub runs: usize,
    pub techniques: Vec<Technique>,
    pub generation: GenerationConfig,
    pub testgen: TestGenConfig,
    pub claim_rules: ClaimRules,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            runs: 10,
            techniques: Technique::ALL.to_vec(),
            generation: GenerationConfig::default(),
            testgen: TestGenConfig::default(),
            claim_rules: ClaimRules::default(),
            workers: 1,
        }
    }
}

/// Good / total reference versions of one cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefTally {
    pub good: usize,
    pub total: usize,
}

impl std::ops::Add for RefTally {
    type Output = RefTally;

    fn add(self, other: RefTally) -> RefTally {
        RefTally { good: self.good + other.good, total: self.total + other.total }
    }
}

impl RefTally {
    /// Zero when no references were checked.
    pub fn rate(self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.good as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellOutcome {
    Completed {
        status: OutcomeStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        category: Option<Classification>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_case: Option<TestCaseRecord>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        disposition: Option<BaselineDisposition>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        refs: Option<RefTally>,
    },
    Error {
        error: String,
        message: String,
    },
}

/// One `(subject, technique, run)` cell of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub subject: String,
    pub technique: Technique,
    pub run: usize,
    #[serde(flatten)]
    pub outcome: CellOutcome,
}

impl CellRecord {
    pub fn classification(&self) -> Option<Classification> {
        match &self.outcome {
            CellOutcome::Completed { category, .. } => *category,
            CellOutcome::Error { .. } => None,
        }
    }

    /// `found`, `not_found_attempts_exhausted`, ..., or `error: <Kind>`.
    pub fn status_label(&self) -> String {
        match &self.outcome {
            CellOutcome::Completed { status, .. } => status.as_str().to_string(),
            CellOutcome::Error { error, .. } => format!("error: {error}"),
        }
    }

    pub fn category_label(&self) -> &'static str {
        self.classification().map_or("none", |c| c.label())
    }

    pub fn refs(&self) -> Option<RefTally> {
        match &self.outcome {
            CellOutcome::Completed { refs, .. } => *refs,
            CellOutcome::Error { .. } => None,
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self.outcome, CellOutcome::Error { .. })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("cell.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Fraction of generated references that pass their subject's ground-truth
/// tests.
pub fn reference_goodness_rate(
    corpus: &[CorpusEntry],
    generated: &[(String, Vec<ReferenceVersion>)],
    sandbox: &mut dyn Sandbox,
    timeout_ms: u64,
) -> Result<f64> {
    let mut tally = RefTally::default();
    for (subject, refs) in generated {
        let entry = corpus
            .iter()
            .find(|e| &e.id == subject)
            .ok_or_else(|| Error::Config(format!("unknown subject {subject}")))?;
        tally = tally + check_refs(refs, &entry.ground_truth_tests, sandbox, timeout_ms)?;
    }
    Ok(tally.rate())
}

fn check_refs(
    refs: &[ReferenceVersion],
    ground_truth: &[TestCase],
    sandbox: &mut dyn Sandbox,
    timeout_ms: u64,
) -> Result<RefTally> {
    let mut tally = RefTally { good: 0, total: refs.len() };
    for r in refs {
        if is_good_reference(r, ground_truth, sandbox, timeout_ms)? {
            tally.good += 1;
        }
    }
    Ok(tally)
}

struct CellContext<'a> {
    cfg: &'a EvalConfig,
    prompts: &'a PromptBook,
    source: &'a LlmSource,
    out: Option<&'a Path>,
}

impl CellContext<'_> {
    fn run(&self, entry: &CorpusEntry, technique: Technique, run: usize, sandbox: &mut dyn Sandbox) -> CellRecord {
        let outcome = match self.try_run(entry, technique, run, sandbox) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("{}/{technique}/run-{run}: {e}", entry.id);
                CellOutcome::Error { error: e.kind().to_string(), message: e.to_string() }
            }
        };
        CellRecord { subject: entry.id.clone(), technique, run, outcome }
    }

    fn try_run(
        &self,
        entry: &CorpusEntry,
        technique: Technique,
        run: usize,
        sandbox: &mut dyn Sandbox,
    ) -> Result<CellOutcome> {
        let llm = self.source.open(&entry.id, technique, run)?;
        let dir = self.out.map(|o| cell_dir(o, &entry.id, technique, run));
        let timeout = self.cfg.testgen.timeout_ms;
        let mut refs = None;
        let outcome = match technique {
            Technique::DiffPrompt => {
                let found = differential_prompting(
                    &entry.buggy,
                    &llm,
                    self.prompts,
                    self.cfg.generation,
                    self.cfg.testgen,
                    sandbox,
                    dir.as_deref(),
                )?;
                if !entry.ground_truth_tests.is_empty() {
                    refs = Some(check_refs(&found.references, &entry.ground_truth_tests, sandbox, timeout)?);
                }
                found.outcome
            }
            Technique::BaseChatGpt => {
                let outcome = base_chatgpt_find(&entry.buggy, &llm, self.prompts, &self.cfg.claim_rules)?;
                if let Some(dir) = &dir {
                    outcome.write(dir)?;
                }
                outcome
            }
        };
        self.summarize(entry, outcome, refs, sandbox)
    }

    fn summarize(
        &self,
        entry: &CorpusEntry,
        outcome: PipelineOutcome,
        refs: Option<RefTally>,
        sandbox: &mut dyn Sandbox,
    ) -> Result<CellOutcome> {
        let category = match &outcome.test_case {
            Some(tc) => Some(classify(
                &TestCase::from(tc.clone()),
                &entry.buggy,
                &entry.patched,
                sandbox,
                self.cfg.testgen.timeout_ms,
            )?),
            None => None,
        };
        Ok(CellOutcome::Completed {
            status: outcome.status,
            category,
            test_case: outcome.test_case,
            disposition: outcome.disposition,
            refs,
        })
    }
}

/// Runs every `(subject, technique, run)` cell over a pool of
/// `cfg.workers` threads, each owning one sandbox, then classifies any
/// ingested suites and assembles the report. Cell failures are recorded in
/// the report; only setup failures abort. With `out` set, cell records and
/// report files are written there.
pub fn run_corpus(
    corpus: &[CorpusEntry],
    cfg: &EvalConfig,
    prompts: &PromptBook,
    source: &LlmSource,
    sandboxes: &SandboxFactory<'_>,
    out: Option<&Path>,
) -> Result<Report> {
    if cfg.runs == 0 || cfg.techniques.is_empty() {
        return Err(Error::Config("need at least one run and one technique".into()));
    }
    cfg.generation.validate()?;
    cfg.testgen.validate()?;
    let mut cells = Vec::new();
    for (i, _) in corpus.iter().enumerate() {
        for &t in &cfg.techniques {
            for r in 1..=cfg.runs {
                cells.push((i, t, r));
            }
        }
    }
    let ctx = CellContext { cfg, prompts, source, out };
    let next = AtomicUsize::new(0);
    let records = Mutex::new(Vec::with_capacity(cells.len()));
    let workers = cfg.workers.clamp(1, cells.len().max(1));
    std::thread::scope(|scope| -> Result<()> {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| -> Result<()> {
                    let mut sandbox = sandboxes()?;
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(&(e, t, r)) = cells.get(i) else { return Ok(()) };
                        let record = ctx.run(&corpus[e], t, r, sandbox.as_mut());
                        if let Some(out) = out {
                            record.write(&cell_dir(out, &record.subject, t, r))?;
                        }
                        records.lock().unwrap_or_else(|p| p.into_inner()).push(record);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().map_err(|_| Error::Config("evaluation worker panicked".into()))??;
        }
        Ok(())
    })?;
    let mut records = records.into_inner().unwrap_or_else(|p| p.into_inner());
    records.sort_by(|a, b| (&a.subject, a.technique, a.run).cmp(&(&b.subject, b.technique, b.run)));

    let mut ingested = Vec::new();
    if corpus.iter().any(|e| e.ingested.is_some()) {
        let mut sandbox = sandboxes()?;
        for entry in corpus {
            if let Some(runs) = &entry.ingested {
                ingested.push(IngestedSummary::classify(entry, runs, sandbox.as_mut(), cfg.testgen.timeout_ms)?);
            }
        }
    }
    let report = Report::from_cells(records, ingested);
    if let Some(out) = out {
        super::report::write_report(&report, out)?;
    }
    Ok(report)
}
