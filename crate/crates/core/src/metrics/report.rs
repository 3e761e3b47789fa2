use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::{read_json, CorpusEntry};
use super::runner::{CellRecord, RefTally};
use super::{accuracy, percent, success_rate, RunTable};
use crate::sandbox::Sandbox;
use crate::taxonomy::{classify, TestCase, Verdict};
use crate::testgen::Technique;
use crate::{Error, Result};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_MD: &str = "summary.md";
const INGESTED_JSON: &str = "ingested.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechniqueSummary {
    pub technique: Technique,
    pub cells: usize,
    pub found: usize,
    pub errors: usize,
    /// Per verdict label; `PT` includes the `PT-masking` cases.
    pub categories: BTreeMap<String, usize>,
    pub pt_masking: usize,
    pub success_rate: f64,
    /// Absent when nothing was found.
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub references: Option<RefTally>,
}

/// Classification of an externally generated suite, which may hold any
/// number of tests per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestedSummary {
    pub subject: String,
    pub runs: usize,
    pub tests: usize,
    /// Per verdict label, plus `unclassified` for ambiguous tests.
    pub counts: BTreeMap<String, usize>,
    pub mean_per_run: BTreeMap<String, f64>,
    pub rounded_per_run: BTreeMap<String, u64>,
    pub runs_with_ft_ia: usize,
}

impl IngestedSummary {
    pub fn classify(
        entry: &CorpusEntry,
        runs: &[Vec<TestCase>],
        sandbox: &mut dyn Sandbox,
        timeout_ms: u64,
    ) -> Result<Self> {
        let mut counts: BTreeMap<String, usize> = Verdict::ALL.iter().map(|v| (v.as_str().to_string(), 0)).collect();
        let mut runs_with_ft_ia = 0;
        for suite in runs {
            let mut hit = false;
            for t in suite {
                let key = match classify(t, &entry.buggy, &entry.patched, sandbox, timeout_ms) {
                    Ok(c) => {
                        hit |= c.verdict == Verdict::FtIA;
                        c.verdict.as_str()
                    }
                    Err(Error::AmbiguousVerdict) => "unclassified",
                    Err(e) => return Err(e),
                };
                *counts.entry(key.to_string()).or_default() += 1;
            }
            runs_with_ft_ia += usize::from(hit);
        }
        let n = runs.len().max(1) as f64;
        let mean_per_run: BTreeMap<String, f64> = counts.iter().map(|(k, c)| (k.clone(), *c as f64 / n)).collect();
        let rounded_per_run = mean_per_run.iter().map(|(k, m)| (k.clone(), m.round() as u64)).collect();
        Ok(IngestedSummary {
            subject: entry.id.clone(),
            runs: runs.len(),
            tests: runs.iter().map(Vec::len).sum(),
            counts,
            mean_per_run,
            rounded_per_run,
            runs_with_ft_ia,
        })
    }
}

/// Machine-readable evaluation report. Contains no timings, so replayed
/// evaluations produce identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: usize,
    pub subjects: Vec<String>,
    pub techniques: Vec<Technique>,
    pub summary: Vec<TechniqueSummary>,
    pub cells: Vec<CellRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ingested: Vec<IngestedSummary>,
}

impl Report {
    /// Assembles a report from cell records in any order.
    pub fn from_cells(mut cells: Vec<CellRecord>, ingested: Vec<IngestedSummary>) -> Report {
        cells.sort_by(|a, b| (&a.subject, a.technique, a.run).cmp(&(&b.subject, b.technique, b.run)));
        let subjects: Vec<String> =
            cells.iter().map(|c| c.subject.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let techniques: Vec<Technique> =
            cells.iter().map(|c| c.technique).collect::<BTreeSet<_>>().into_iter().collect();
        let runs = cells.iter().map(|c| c.run).max().unwrap_or(0);
        let table = run_table(&cells, runs);
        let summary = techniques.iter().map(|&t| summarize(&table, &cells, t, &subjects)).collect();
        Report { runs, subjects, techniques, summary, cells, ingested }
    }

    pub fn run_table(&self) -> RunTable {
        run_table(&self.cells, self.runs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Columns: subject, technique, run, category, status.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["subject", "technique", "run", "category", "status"]).expect("in-memory write");
        for c in &self.cells {
            w.write_record([
                c.subject.as_str(),
                c.technique.as_str(),
                &c.run.to_string(),
                c.category_label(),
                &c.status_label(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::from("# Evaluation summary\n\n");
        let _ = writeln!(md, "Subjects: {} · runs per subject: {}\n", self.subjects.len(), self.runs);
        md.push_str(
            "| Technique | Runs | Found | FT-IA | FT-Ia | FT-ia | PT | IT | Errors | Success rate | Accuracy |\n",
        );
        md.push_str("|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
        for s in &self.summary {
            let count = |v: Verdict| s.categories.get(v.as_str()).copied().unwrap_or(0);
            let ft_ia = count(Verdict::FtIA);
            let acc = match s.accuracy {
                Some(a) => format!("{} ({ft_ia}/{})", percent(a), s.found),
                None => "n/a (0 found)".to_string(),
            };
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} ({ft_ia}/{}) | {acc} |",
                s.technique,
                s.cells,
                s.found,
                ft_ia,
                count(Verdict::FtIa),
                count(Verdict::Ftia),
                count(Verdict::Pt),
                count(Verdict::It),
                s.errors,
                percent(s.success_rate),
                s.cells,
            );
        }
        let masking: Vec<String> = self
            .summary
            .iter()
            .filter(|s| s.pt_masking > 0)
            .map(|s| format!("{}: {}", s.technique, s.pt_masking))
            .collect();
        if !masking.is_empty() {
            let _ = writeln!(md, "\nPT-masking cases (included in PT): {}", masking.join(", "));
        }
        for s in &self.summary {
            if let Some(r) = s.references {
                let _ = writeln!(
                    md,
                    "\nGood reference versions ({}): {} ({}/{})",
                    s.technique,
                    percent(r.rate()),
                    r.good,
                    r.total
                );
            }
        }
        if !self.ingested.is_empty() {
            md.push_str("\n## Ingested suites\n\n");
            md.push_str("Mean tests per run, raw and rounded.\n\n");
            md.push_str("| Subject | Runs | Tests | FT-IA | FT-Ia | FT-ia | PT | IT | Runs with FT-IA |\n");
            md.push_str("|---|---:|---:|---:|---:|---:|---:|---:|---:|\n");
            for g in &self.ingested {
                let cell = |v: Verdict| {
                    let k = v.as_str();
                    format!(
                        "{:.1} ({})",
                        g.mean_per_run.get(k).copied().unwrap_or(0.0),
                        g.rounded_per_run.get(k).copied().unwrap_or(0)
                    )
                };
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                    g.subject,
                    g.runs,
                    g.tests,
                    cell(Verdict::FtIA),
                    cell(Verdict::FtIa),
                    cell(Verdict::Ftia),
                    cell(Verdict::Pt),
                    cell(Verdict::It),
                    g.runs_with_ft_ia
                );
            }
        }
        md
    }
}

fn run_table(cells: &[CellRecord], runs: usize) -> RunTable {
    let mut rows: BTreeMap<(String, Technique), Vec<Option<Verdict>>> = BTreeMap::new();
    for c in cells {
        rows.entry((c.subject.clone(), c.technique)).or_default().push(c.classification().map(|k| k.verdict));
    }
    let mut table = RunTable::new(runs);
    for ((s, t), row) in rows {
        table.insert(s, t, row);
    }
    table
}

fn summarize(table: &RunTable, cells: &[CellRecord], technique: Technique, subjects: &[String]) -> TechniqueSummary {
    let mine: Vec<&CellRecord> = cells.iter().filter(|c| c.technique == technique).collect();
    let categories =
        table.verdict_counts(technique, subjects).into_iter().map(|(v, n)| (v.as_str().to_string(), n)).collect();
    let references = mine.iter().filter_map(|c| c.refs()).reduce(|a, b| a + b);
    let tally = table.tally(technique, subjects).unwrap_or_default();
    TechniqueSummary {
        technique,
        cells: tally.cells,
        found: tally.found,
        errors: mine.iter().filter(|c| c.is_error()).count(),
        categories,
        pt_masking: mine.iter().filter(|c| c.classification().is_some_and(|k| k.masking)).count(),
        success_rate: success_rate(table, technique, subjects).unwrap_or(0.0),
        accuracy: accuracy(table, technique, subjects).ok(),
        references,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `report.csv` and `summary.md` into `out`, and
/// persists ingested summaries for later regeneration.
pub fn write_report(report: &Report, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join(REPORT_JSON), &report.to_json())?;
    write(&out.join(REPORT_CSV), &report.to_csv())?;
    write(&out.join(SUMMARY_MD), &report.to_markdown())?;
    let ingested = out.join("runs").join(INGESTED_JSON);
    if !report.ingested.is_empty() {
        std::fs::create_dir_all(out.join("runs")).map_err(|e| Error::io(out, e))?;
        let text = serde_json::to_string_pretty(&report.ingested).map_err(|e| Error::json(&ingested, e))?;
        write(&ingested, &(text + "\n"))?;
    }
    Ok(())
}

fn collect_cells(dir: &Path, cells: &mut Vec<CellRecord>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_cells(&path, cells)?;
        } else if path.file_name().is_some_and(|n| n == "cell.json") {
            cells.push(read_json(&path)?);
        }
    }
    Ok(())
}

/// Rebuilds and rewrites the report files from the cell records persisted
/// under `out/runs`.
pub fn regenerate_report(out: &Path) -> Result<Report> {
    let runs = out.join("runs");
    let mut cells = Vec::new();
    collect_cells(&runs, &mut cells)?;
    if cells.is_empty() {
        return Err(Error::Config(format!("{}: no cell records", runs.display())));
    }
    let ingested_path = runs.join(INGESTED_JSON);
    let ingested = if ingested_path.exists() { read_json(&ingested_path)? } else { Vec::new() };
    let report = Report::from_cells(cells, ingested);
    write_report(&report, out)?;
    Ok(report)
}
