//! Corpus layout: `<corpus>/<id>/{buggy.src, patched.src, tests.json, meta.json}`
//! plus an optional `ingested_tests.json` of externally generated tests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::sandbox::Sandbox;
use crate::taxonomy::{classify, ProgramUnderTest, TestCase, TestCaseRecord, TypeTag, Verdict};
use crate::{Error, Result};

/// `meta.json` of a subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub entry_point: String,
    pub arity: usize,
    pub param_types: Vec<TypeTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl SubjectMeta {
    pub fn load(path: &Path) -> Result<Self> {
        let meta: SubjectMeta = read_json(path)?;
        if meta.param_types.len() != meta.arity {
            return Err(Error::Config(format!(
                "{}: arity {} but {} param_types",
                path.display(),
                meta.arity,
                meta.param_types.len()
            )));
        }
        Ok(meta)
    }

    pub fn program(&self, id: &str, source: String) -> ProgramUnderTest {
        ProgramUnderTest {
            id: id.to_string(),
            source,
            entry_point: self.entry_point.clone(),
            arity: self.arity,
            param_types: self.param_types.clone(),
        }
    }
}

/// `ingested_tests.json`: a flat list of tests (one run) or a list of
/// per-run lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum IngestedFile {
    Runs(Vec<Vec<TestCaseRecord>>),
    Single(Vec<TestCaseRecord>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    pub buggy: ProgramUnderTest,
    pub patched: ProgramUnderTest,
    pub ground_truth_tests: Vec<TestCase>,
    pub description: Option<String>,
    /// Test suites from an external generator, one per run.
    pub ingested: Option<Vec<Vec<TestCase>>>,
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_tests(path: &Path) -> Result<Vec<TestCase>> {
    let records: Vec<TestCaseRecord> = read_json(path)?;
    Ok(records.into_iter().map(TestCase::from).collect())
}

impl CorpusEntry {
    pub fn load(dir: &Path) -> Result<Self> {
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("{}: not a subject directory", dir.display())))?
            .to_string();
        let meta = SubjectMeta::load(&dir.join("meta.json"))?;
        let buggy = meta.program(&id, read_text(&dir.join("buggy.src"))?);
        let patched = meta.program(&format!("{id}.patched"), read_text(&dir.join("patched.src"))?);
        let tests_path = dir.join("tests.json");
        let ground_truth_tests = if tests_path.exists() { read_tests(&tests_path)? } else { Vec::new() };
        let ingested_path = dir.join("ingested_tests.json");
        let ingested = if ingested_path.exists() {
            let runs = match read_json::<IngestedFile>(&ingested_path)? {
                IngestedFile::Runs(runs) => runs,
                IngestedFile::Single(tests) => vec![tests],
            };
            Some(runs.into_iter().map(|r| r.into_iter().map(TestCase::from).collect()).collect())
        } else {
            None
        };
        Ok(CorpusEntry { id, buggy, patched, ground_truth_tests, description: meta.description, ingested })
    }

    /// Checks that both programs are well formed and that every ground-truth
    /// test is a correct failure-inducing test for the pair.
    pub fn validate(&self, sandbox: &mut dyn Sandbox, timeout_ms: u64) -> Result<()> {
        self.buggy.validate(sandbox)?;
        self.patched.validate(sandbox)?;
        for t in &self.ground_truth_tests {
            let c = classify(t, &self.buggy, &self.patched, sandbox, timeout_ms)?;
            if c.verdict != Verdict::FtIA {
                return Err(Error::Config(format!(
                    "{}: ground-truth test {} classifies as {}",
                    self.id,
                    t.render_assert(&self.buggy.entry_point),
                    c.label()
                )));
            }
        }
        Ok(())
    }
}

/// Subject directories of `root`, sorted by name.
pub fn subject_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() && path.join("meta.json").exists() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn load_corpus(root: &Path) -> Result<Vec<CorpusEntry>> {
    let entries = subject_dirs(root)?.iter().map(|d| CorpusEntry::load(d)).collect::<Result<Vec<_>>>()?;
    if entries.is_empty() {
        return Err(Error::Config(format!("{}: no subjects found", root.display())));
    }
    Ok(entries)
}
