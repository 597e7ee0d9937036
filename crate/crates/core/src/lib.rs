//! Knowledge-conflict question answering: an agent loop over a hierarchical
//! action space (ELICIT, REASON, ASSERT, DECOMPOSE, FINISH) with
//! complexity-gated decomposition, prompting baselines, and evaluation.

pub mod actions;
pub mod baselines;
pub mod complexity;
pub mod data;
pub mod domain;
pub mod engine;
pub mod eval;
pub mod parallel;
pub mod prompts;
pub mod provider;
pub mod runner;

pub use domain::{Choice, ConflictType, DatasetRecord, Trajectory, UsageRecord};
pub use engine::{Engine, EngineConfig};
pub use provider::{CompletionParams, LanguageModel};
