//! The end-to-end Differential Prompting run for one PUT.

use std::path::Path;

use crate::generator::{write_artifacts, GenerationConfig, Generator};
use crate::llm::{Llm, PromptBook};
use crate::sandbox::Sandbox;
use crate::taxonomy::{Intention, ProgramUnderTest, ReferenceVersion};
use crate::testgen::{PipelineOutcome, TestCaseGenerator, TestGenConfig};
use crate::Result;

#[derive(Debug, Clone)]
pub struct FindReport {
    pub intention: Intention,
    pub references: Vec<ReferenceVersion>,
    pub outcome: PipelineOutcome,
}

/// Infers the intention, synthesizes references from it, and searches for
/// a failure-inducing test case. With `artifacts` set, writes
/// `intention.txt`, `ref_<i>.src` and `outcome.json` there.
pub fn differential_prompting(
    put: &ProgramUnderTest,
    llm: &Llm,
    prompts: &PromptBook,
    generation: GenerationConfig,
    testgen: TestGenConfig,
    sandbox: &mut dyn Sandbox,
    artifacts: Option<&Path>,
) -> Result<FindReport> {
    let generator = Generator::new(llm, prompts, generation);
    let intention = generator.infer_intention(put)?;
    if intention.is_low_confidence() {
        log::warn!("{}: low-confidence intention: {}", put.id, intention.text);
    }
    let references = generator.generate_references(&intention, put, sandbox)?;
    if let Some(dir) = artifacts {
        write_artifacts(dir, &intention, &references)?;
    }
    let outcome = TestCaseGenerator::new(llm, prompts, testgen).find_failure_inducing(put, &references, sandbox)?;
    if let Some(dir) = artifacts {
        outcome.write(dir)?;
    }
    Ok(FindReport { intention, references, outcome })
}
