//! Program generation: infer the PUT's intention, then synthesize reference
//! versions from that intention alone.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::baseline::{classify_claim, BugClaim, ClaimRules};
use crate::llm::{ChatResponse, Llm, PromptBook, PromptContext, PromptKind};
use crate::sandbox::Sandbox;
use crate::taxonomy::{
    defines_function, output_equal, Intention, Output, ProgramUnderTest, ReferenceVersion, TestCase,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// At least two: one reference cannot validate another's output.
    pub n_versions: usize,
    pub max_regen_rounds: u32,
    /// Send the reference prompt as a follow-up in the intention
    /// conversation instead of a fresh one. Off by default because the
    /// intention conversation contains the PUT source.
    pub shared_conversation: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig { n_versions: 2, max_regen_rounds: 3, shared_conversation: false }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_versions < 2 {
            return Err(Error::Config(format!("n_versions must be at least 2, got {}", self.n_versions)));
        }
        Ok(())
    }
}

/// Contents of every fenced (```) block, in order. An unterminated final
/// fence runs to the end of the text.
pub fn extract_code_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(lines) => blocks.push(lines.join("\n")),
                None => current = Some(Vec::new()),
            }
        } else if let Some(lines) = current.as_mut() {
            lines.push(line);
        }
    }
    if let Some(lines) = current {
        blocks.push(lines.join("\n"));
    }
    blocks
}

/// Fallback for unfenced answers: the first run of lines starting at a
/// top-level `def`, continuing through indented lines, blank lines and
/// further top-level definitions or imports.
pub fn extract_function_heuristic(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.iter().position(|l| l.starts_with("def ") || l.starts_with("async def "))?;
    let mut prefix: Vec<&str> = lines[..start]
        .iter()
        .rev()
        .take_while(|l| l.starts_with("import ") || l.starts_with("from ") || l.starts_with('@'))
        .copied()
        .collect();
    prefix.reverse();
    let mut body = prefix;
    for line in &lines[start..] {
        let top_level_code =
            ["def ", "async def ", "import ", "from ", "class ", "@"].iter().any(|p| line.starts_with(p));
        if line.trim().is_empty() || line.starts_with([' ', '\t']) || top_level_code {
            body.push(line);
        } else {
            break;
        }
    }
    let text = body.join("\n").trim_end().to_string();
    Some(text)
}

/// Candidate programs in a model response: fenced blocks that define a
/// function, or the heuristic fallback when there are none.
pub fn extract_programs(text: &str) -> Vec<String> {
    let blocks: Vec<String> = extract_code_blocks(text)
        .into_iter()
        .filter(|b| b.lines().any(|l| l.starts_with("def ") || l.starts_with("async def ")))
        .collect();
    if !blocks.is_empty() {
        return blocks;
    }
    extract_function_heuristic(text).into_iter().collect()
}

/// Renames the first top-level function to `entry_point` (with all
/// whole-word references to it) unless `entry_point` is already defined.
pub fn normalize_entry_point(source: &str, entry_point: &str) -> String {
    if defines_function(source, entry_point) {
        return source.to_string();
    }
    let def = Regex::new(r"(?m)^(?:async\s+)?def\s+([A-Za-z_][A-Za-z0-9_]*)\s*\(").expect("valid regex");
    let Some(name) = def.captures(source).map(|c| c[1].to_string()) else {
        return source.to_string();
    };
    let word = Regex::new(&format!(r"\b{}\b", regex::escape(&name))).expect("valid regex");
    word.replace_all(source, entry_point).into_owned()
}

pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Intention text from a response: the part after an `Intention:` label if
/// present, otherwise the whole response, with code blocks removed.
pub fn extract_intention(response: &str) -> String {
    let mut prose = String::new();
    let mut in_fence = false;
    for line in response.lines() {
        if line.trim_start().starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if !in_fence {
            prose.push_str(line);
            prose.push('\n');
        }
    }
    let lower = prose.to_lowercase();
    let text = match lower.find("intention:") {
        Some(i) => &prose[i + "intention:".len()..],
        None => &prose[..],
    };
    text.trim().to_string()
}

/// Outcome of the strawman generator's two-step prompting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrawmanOutcome {
    VersionsGenerated,
    NoBugClaimed,
    Inconclusive,
    ExtractionFailed,
}

#[derive(Debug, Clone)]
pub struct StrawmanResult {
    pub outcome: StrawmanOutcome,
    pub versions: Vec<ReferenceVersion>,
}

/// The program generator.
pub struct Generator<'a> {
    pub llm: &'a Llm,
    pub prompts: &'a PromptBook,
    pub cfg: GenerationConfig,
}

impl<'a> Generator<'a> {
    pub fn new(llm: &'a Llm, prompts: &'a PromptBook, cfg: GenerationConfig) -> Self {
        Generator { llm, prompts, cfg }
    }

    fn intention_request(&self, put: &ProgramUnderTest) -> Result<crate::llm::ChatRequest> {
        self.prompts.render_prompt(
            PromptKind::InferIntention,
            &PromptContext::InferIntention { source: &put.source, entry_point: &put.entry_point },
        )
    }

    pub fn infer_intention(&self, put: &ProgramUnderTest) -> Result<Intention> {
        if put.source.trim().is_empty() {
            return Err(Error::Config(format!("{}: empty source", put.id)));
        }
        let resp = self.llm.complete(&self.intention_request(put)?)?;
        let text = extract_intention(&resp.content);
        if text.is_empty() {
            return Err(Error::EmptyIntention);
        }
        Ok(Intention { text, put_id: put.id.clone(), raw_response: resp.content })
    }

    pub fn generate_references(
        &self,
        intention: &Intention,
        put: &ProgramUnderTest,
        sandbox: &mut dyn Sandbox,
    ) -> Result<Vec<ReferenceVersion>> {
        self.cfg.validate()?;
        let ctx = PromptContext::GenerateReferences {
            intention: &intention.text,
            n_versions: self.cfg.n_versions,
            entry_point: &put.entry_point,
        };
        let mut req = self.prompts.render_prompt(PromptKind::GenerateReferences, &ctx)?;
        if self.cfg.shared_conversation {
            let first = self.intention_request(put)?;
            req = first.follow_up(&ChatResponse::stop(intention.raw_response.clone()), req);
        }
        let put_norm = normalize_whitespace(&put.source);
        let mut versions: Vec<ReferenceVersion> = Vec::new();
        let mut round = 0;
        loop {
            let resp = self.llm.complete(&req)?;
            for candidate in extract_programs(&resp.content) {
                let source = normalize_entry_point(&candidate, &put.entry_point);
                if normalize_whitespace(&source) == put_norm {
                    log::info!("{}: discarding reference that echoes the PUT", put.id);
                    continue;
                }
                let check = sandbox.syntax_check(&source, &put.entry_point)?;
                if !(check.ok && defines_function(&source, &put.entry_point)) {
                    log::info!("{}: discarding non-compilable reference: {:?}", put.id, check.diagnostic);
                    continue;
                }
                versions.push(ReferenceVersion {
                    index: versions.len() + 1,
                    source,
                    entry_point: put.entry_point.clone(),
                    intention: intention.clone(),
                    compilable: true,
                });
            }
            if versions.len() >= self.cfg.n_versions {
                break;
            }
            if round >= self.cfg.max_regen_rounds {
                return Err(Error::InsufficientVersions {
                    wanted: self.cfg.n_versions,
                    got: versions.len(),
                    rounds: round,
                });
            }
            round += 1;
        }
        versions.truncate(self.cfg.n_versions);
        Ok(versions)
    }

    /// Strawman: ask whether the PUT is buggy and, if so, for bug-fixed
    /// implementations of it.
    pub fn strawman_generate(
        &self,
        put: &ProgramUnderTest,
        rules: &ClaimRules,
        sandbox: &mut dyn Sandbox,
    ) -> Result<StrawmanResult> {
        let ask = self.prompts.render_prompt(
            PromptKind::BaselineHasBug,
            &PromptContext::BaselineHasBug { source: &put.source, entry_point: &put.entry_point },
        )?;
        let answer = self.llm.complete(&ask)?;
        let outcome = match classify_claim(&answer.content, rules) {
            BugClaim::Negative => Some(StrawmanOutcome::NoBugClaimed),
            BugClaim::Inconclusive => Some(StrawmanOutcome::Inconclusive),
            BugClaim::Affirmative => None,
        };
        if let Some(outcome) = outcome {
            return Ok(StrawmanResult { outcome, versions: vec![] });
        }
        let fix = self.prompts.render_prompt(
            PromptKind::StrawmanFix,
            &PromptContext::StrawmanFix { n_versions: self.cfg.n_versions, entry_point: &put.entry_point },
        )?;
        let fixes = self.llm.complete(&ask.follow_up(&answer, fix))?;
        let intention = Intention {
            text: format!("bug-fixed version of {}", put.id),
            put_id: put.id.clone(),
            raw_response: answer.content.clone(),
        };
        let mut versions = Vec::new();
        for candidate in extract_programs(&fixes.content) {
            let source = normalize_entry_point(&candidate, &put.entry_point);
            let check = sandbox.syntax_check(&source, &put.entry_point)?;
            if check.ok && defines_function(&source, &put.entry_point) {
                versions.push(ReferenceVersion {
                    index: versions.len() + 1,
                    source,
                    entry_point: put.entry_point.clone(),
                    intention: intention.clone(),
                    compilable: true,
                });
            }
        }
        versions.truncate(self.cfg.n_versions);
        let outcome =
            if versions.is_empty() { StrawmanOutcome::ExtractionFailed } else { StrawmanOutcome::VersionsGenerated };
        Ok(StrawmanResult { outcome, versions })
    }
}

/// A reference is good when it passes every ground-truth failure-inducing
/// test of its subject.
pub fn is_good_reference(
    reference: &ReferenceVersion,
    ground_truth: &[TestCase],
    sandbox: &mut dyn Sandbox,
    timeout_ms: u64,
) -> Result<bool> {
    if ground_truth.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    for test in ground_truth {
        let got = sandbox.execute(&reference.source, &reference.entry_point, &test.input.args, timeout_ms)?;
        if !output_equal(&got.output(), &Output::from_expected(&test.expected)) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Writes `intention.txt` and `ref_<i>.src` under `dir`.
pub fn write_artifacts(dir: &Path, intention: &Intention, refs: &[ReferenceVersion]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("intention.txt");
    std::fs::write(&path, format!("{}\n", intention.text)).map_err(|e| Error::io(&path, e))?;
    for r in refs {
        let path = dir.join(format!("ref_{}.src", r.index));
        std::fs::write(&path, &r.source).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_blocks() {
        let text = "Reference Version 1:\n```python\ndef a():\n    return 1\n```\nand\n```\ndef b(): pass\n```\n";
        assert_eq!(extract_code_blocks(text), vec!["def a():\n    return 1", "def b(): pass"]);
        assert_eq!(extract_code_blocks("```python\ndef c(): pass"), vec!["def c(): pass"]);
        assert!(extract_code_blocks("no code").is_empty());
    }

    #[test]
    fn heuristic_function_detection() {
        let text =
            "Sure! Here it is:\nimport math\ndef gcd(a, b):\n    return math.gcd(a, b)\n\nThis uses the library.";
        assert_eq!(extract_function_heuristic(text).unwrap(), "import math\ndef gcd(a, b):\n    return math.gcd(a, b)");
        assert!(extract_function_heuristic("just words").is_none());
        assert_eq!(extract_programs(text).len(), 1);
        let prose_block = "```\nThis block has no function.\n```";
        assert!(extract_programs(prose_block).is_empty());
    }

    #[test]
    fn renames_entry_point_and_recursive_calls() {
        let src = "def my_gcd(a, b):\n    if b == 0:\n        return a\n    return my_gcd(b, a % b)\n";
        let renamed = normalize_entry_point(src, "gcd");
        assert_eq!(renamed, "def gcd(a, b):\n    if b == 0:\n        return a\n    return gcd(b, a % b)\n");
        let already = "def helper(x):\n    return x\n\ndef gcd(a, b):\n    return helper(a)\n";
        assert_eq!(normalize_entry_point(already, "gcd"), already);
        assert_eq!(normalize_entry_point("x = 1", "gcd"), "x = 1");
    }

    #[test]
    fn intention_extraction() {
        assert_eq!(
            extract_intention("Intention: The function computes the greatest common divisor of a and b."),
            "The function computes the greatest common divisor of a and b."
        );
        assert_eq!(extract_intention("  It sorts a list.\n"), "It sorts a list.");
        assert_eq!(extract_intention("```python\ndef f(): pass\n```\n"), "");
    }

    #[test]
    fn config_requires_two_versions() {
        assert!(GenerationConfig::default().validate().is_ok());
        let one = GenerationConfig { n_versions: 1, ..Default::default() };
        assert!(one.validate().is_err());
    }
}
