//! Differential testing of a program under test (PUT) against reference
//! versions synthesized by an LLM from the PUT's inferred intention.
//!
//! The pipeline has two halves:
//!
//! - [`generator`] asks the model what the PUT is meant to do, then asks for
//!   independent implementations of that intention (reference versions).
//! - [`testgen`] asks the model for test inputs, uses reference-version
//!   consensus as the expected output, and reports the first input on which
//!   the PUT disagrees.
//!
//! [`taxonomy`] classifies a found test case against a ground-truth patched
//! program, and [`metrics`] runs whole corpora and computes success rate and
//! accuracy. All model traffic goes through [`llm`], which can record and
//! replay cassettes so that runs are reproducible offline.

pub mod baseline;
pub mod error;
pub mod generator;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod pylit;
pub mod sandbox;
pub mod taxonomy;
pub mod testgen;

pub use error::{Error, Result};
pub use serde_json::Value;
