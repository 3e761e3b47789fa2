//! Corpus evaluation: repeated runs per technique and subject, the run
//! table, and the success-rate / accuracy metrics over it.

mod corpus;
mod report;
mod runner;

use std::collections::BTreeMap;

use crate::taxonomy::Verdict;
use crate::testgen::Technique;
use crate::{Error, Result};

pub use corpus::{load_corpus, read_tests, subject_dirs, CorpusEntry, SubjectMeta};
pub use report::{
    regenerate_report, write_report, IngestedSummary, Report, TechniqueSummary, REPORT_CSV, REPORT_JSON, SUMMARY_MD,
};
pub use runner::{
    cassette_path, cell_dir, reference_goodness_rate, run_corpus, CellOutcome, CellRecord, EvalConfig, LlmSource,
    RefTally, SandboxFactory,
};

/// Per `(subject, technique)`, the verdict of each run's test case, or
/// `None` when the run produced none.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunTable {
    runs: usize,
    rows: BTreeMap<(String, Technique), Vec<Option<Verdict>>>,
}

/// Counts behind both metrics, so they share one FT-IA count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub cells: usize,
    pub found: usize,
    pub ft_ia: usize,
}

impl RunTable {
    pub fn new(runs: usize) -> Self {
        RunTable { runs, rows: BTreeMap::new() }
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    pub fn insert(&mut self, subject: impl Into<String>, technique: Technique, outcomes: Vec<Option<Verdict>>) {
        self.rows.insert((subject.into(), technique), outcomes);
    }

    pub fn row(&self, subject: &str, technique: Technique) -> Option<&[Option<Verdict>]> {
        self.rows.get(&(subject.to_string(), technique)).map(Vec::as_slice)
    }

    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.rows.keys().map(|(s, _)| s.clone()).collect();
        s.dedup();
        s
    }

    /// Counts over `subjects`; every selected row must hold exactly
    /// `runs` outcomes.
    pub fn tally(&self, technique: Technique, subjects: &[String]) -> Result<Tally> {
        if subjects.is_empty() {
            return Err(Error::IncompleteTable("no subjects selected".into()));
        }
        let mut t = Tally::default();
        for s in subjects {
            let row =
                self.row(s, technique).ok_or_else(|| Error::IncompleteTable(format!("no row for {s}/{technique}")))?;
            if row.len() != self.runs {
                return Err(Error::IncompleteTable(format!(
                    "{s}/{technique} has {} runs, expected {}",
                    row.len(),
                    self.runs
                )));
            }
            t.cells += row.len();
            t.found += row.iter().flatten().count();
            t.ft_ia += row.iter().filter(|v| **v == Some(Verdict::FtIA)).count();
        }
        Ok(t)
    }

    pub fn verdict_counts(&self, technique: Technique, subjects: &[String]) -> BTreeMap<Verdict, usize> {
        let mut counts: BTreeMap<Verdict, usize> = Verdict::ALL.iter().map(|v| (*v, 0)).collect();
        for s in subjects {
            for v in self.row(s, technique).unwrap_or_default().iter().flatten() {
                *counts.entry(*v).or_default() += 1;
            }
        }
        counts
    }
}

/// Fraction of runs that yielded a correct failure-inducing test case.
pub fn success_rate(table: &RunTable, technique: Technique, subjects: &[String]) -> Result<f64> {
    let t = table.tally(technique, subjects)?;
    if t.cells == 0 {
        return Err(Error::IncompleteTable("zero runs".into()));
    }
    Ok(t.ft_ia as f64 / t.cells as f64)
}

/// Fraction of emitted test cases that are correct failure-inducing ones.
pub fn accuracy(table: &RunTable, technique: Technique, subjects: &[String]) -> Result<f64> {
    let t = table.tally(technique, subjects)?;
    if t.found == 0 {
        return Err(Error::UndefinedAccuracy);
    }
    Ok(t.ft_ia as f64 / t.found as f64)
}

/// `0.75` → `"75.0%"`.
pub fn percent(rate: f64) -> String {
    format!("{:.1}%", rate * 100.0)
}
