//! Direct-prompting comparator: ask whether the PUT is buggy, and on an
//! affirmative answer ask for a failure-inducing test case. Never executes
//! the PUT.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::llm::{Llm, PromptBook, PromptContext, PromptKind};
use crate::pylit;
use crate::taxonomy::{InputOrigin, ProgramUnderTest, TestCase, TestInput};
use crate::testgen::{OutcomeStatus, PipelineOutcome, Technique};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BugClaim {
    Affirmative,
    Negative,
    Inconclusive,
}

/// Keyword lists for reading a yes/no bug answer. Checked in order:
/// inconclusive, negative, affirmative; anything else is inconclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClaimRules {
    pub inconclusive: Vec<String>,
    pub negative: Vec<String>,
    pub affirmative: Vec<String>,
}

impl Default for ClaimRules {
    fn default() -> Self {
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        ClaimRules {
            inconclusive: owned(&[
                "more information",
                "cannot determine",
                "can't determine",
                "unable to determine",
                "not enough information",
                "insufficient information",
                "cannot confirm",
            ]),
            negative: owned(&[
                "no bug",
                "no bugs",
                "no",
                "not contain",
                "doesn't contain",
                "does not have any bug",
                "doesn't have any bug",
                "bug-free",
                "free of bugs",
            ]),
            affirmative: owned(&["yes", "bug", "bugs", "incorrect", "wrong", "error"]),
        }
    }
}

/// Whether `phrase` occurs in `text` delimited by non-alphanumerics.
fn contains_phrase(text: &str, phrase: &str) -> bool {
    let mut from = 0;
    while let Some(i) = text[from..].find(phrase) {
        let start = from + i;
        let end = start + phrase.len();
        let before = text[..start].chars().next_back();
        let after = text[end..].chars().next();
        let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric());
        if boundary(before) && boundary(after) {
            return true;
        }
        from = start + phrase.len().max(1);
    }
    false
}

pub fn classify_claim(response: &str, rules: &ClaimRules) -> BugClaim {
    let text = response.to_lowercase();
    let first_word: String = text.trim_start().chars().take_while(|c| c.is_alphanumeric()).collect();
    if rules.inconclusive.iter().any(|p| contains_phrase(&text, p)) {
        return BugClaim::Inconclusive;
    }
    // a lone "no" only counts as the answer word
    let negative =
        rules.negative.iter().any(|p| if p == "no" { first_word == "no" } else { contains_phrase(&text, p) });
    if negative {
        return BugClaim::Negative;
    }
    if rules.affirmative.iter().any(|p| contains_phrase(&text, p)) {
        return BugClaim::Affirmative;
    }
    BugClaim::Inconclusive
}

/// What the baseline conversation produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineDisposition {
    NoBugClaimed,
    Inconclusive,
    UnparsableTestCase,
    TestCaseProposed,
}

fn strip_leading_any<'a>(s: &'a str, prefixes: &[&str]) -> Option<&'a str> {
    let lower = s.to_lowercase();
    prefixes.iter().find(|p| lower.starts_with(*p)).map(|p| s[p.len()..].trim_start())
}

const VALUE_LEADS: [&str; 12] = [
    "==",
    "->",
    "=>",
    "should return",
    "should be",
    "returns",
    "return",
    "is expected to be",
    "expected output:",
    "expected:",
    "output:",
    ":",
];

fn value_after(text: &str) -> Option<Value> {
    let t = text.trim_start();
    let t = t.strip_prefix(',').map(str::trim_start).or_else(|| strip_leading_any(t, &VALUE_LEADS))?;
    pylit::parse_literal_prefix(t).ok().map(|(v, _)| v)
}

fn labelled_value(line: &str) -> Option<Value> {
    let lower = line.to_lowercase();
    for label in ["expected output:", "expected output is", "expected:", "output:", "returns"] {
        if let Some(i) = lower.find(label) {
            let rest = line[i + label.len()..].trim_start().trim_start_matches('`');
            if let Ok((v, _)) = pylit::parse_literal_prefix(rest) {
                return Some(v);
            }
        }
    }
    None
}

/// Extracts a `(input, expected)` pair from a model answer. Accepts
/// `assert f(args) == value`, `assert value == f(args)`,
/// `assertEqual(f(args), value)`, `f(args) -> value`, and a call followed
/// by an `Expected output: value` line.
pub fn parse_test_case(text: &str, entry_point: &str) -> Option<TestCase> {
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        let Ok(Some(call)) = pylit::find_call(line, entry_point) else { continue };
        let expected = value_after(call.after)
            .or_else(|| {
                let before = call.before.trim_end().strip_suffix("==")?;
                let before = before.trim();
                let literal = strip_leading_any(before, &["assert"]).unwrap_or(before);
                pylit::parse_literal(literal).ok()
            })
            .or_else(|| lines[i + 1..].iter().take(3).find_map(|l| labelled_value(l)));
        if let Some(expected) = expected {
            return Some(TestCase { input: TestInput { args: call.args, origin: InputOrigin::Llm }, expected });
        }
    }
    None
}

/// Two-step direct prompting for a failure-inducing test case.
pub fn base_chatgpt_find(
    put: &ProgramUnderTest,
    llm: &Llm,
    prompts: &PromptBook,
    rules: &ClaimRules,
) -> Result<PipelineOutcome> {
    let ask = prompts.render_prompt(
        PromptKind::BaselineHasBug,
        &PromptContext::BaselineHasBug { source: &put.source, entry_point: &put.entry_point },
    )?;
    let answer = llm.complete(&ask)?;
    let not_found = |d| PipelineOutcome {
        disposition: Some(d),
        ..PipelineOutcome::empty(Technique::BaseChatGpt, OutcomeStatus::NotFound)
    };
    match classify_claim(&answer.content, rules) {
        BugClaim::Negative => return Ok(not_found(BaselineDisposition::NoBugClaimed)),
        BugClaim::Inconclusive => return Ok(not_found(BaselineDisposition::Inconclusive)),
        BugClaim::Affirmative => {}
    }
    let make = prompts.render_prompt(
        PromptKind::BaselineMakeTest,
        &PromptContext::BaselineMakeTest { entry_point: &put.entry_point },
    )?;
    let reply = llm.complete(&ask.follow_up(&answer, make))?;
    Ok(match parse_test_case(&reply.content, &put.entry_point) {
        Some(test) => PipelineOutcome {
            test_case: Some((&test).into()),
            disposition: Some(BaselineDisposition::TestCaseProposed),
            ..PipelineOutcome::empty(Technique::BaseChatGpt, OutcomeStatus::Found)
        },
        None => {
            log::info!("{}: {}", put.id, crate::Error::UnparsableTestCase);
            not_found(BaselineDisposition::UnparsableTestCase)
        }
    })
}
