//! Batch execution: fans independent records out over a bounded number of
//! workers and returns trajectories ordered by record id.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineMethod, BaselineRunner, DEFAULT_SELF_ASK_CAP};
use crate::complexity::ComplexityScorer;
use crate::domain::{DatasetRecord, Trajectory};
use crate::engine::{Engine, EngineConfig, METHOD_NAME};
use crate::parallel::{self, Execution};
use crate::prompts::PromptSet;
use crate::provider::{CompletionParams, LanguageModel};

/// Default number of trajectories in flight for network providers.
pub const DEFAULT_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Method {
    MicroAct,
    Baseline(BaselineMethod),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::MicroAct => f.write_str(METHOD_NAME),
            Method::Baseline(b) => b.fmt(f),
        }
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == METHOD_NAME {
            return Ok(Method::MicroAct);
        }
        s.parse::<BaselineMethod>()
            .map(Method::Baseline)
            .map_err(|_| format!("unknown method `{s}` (expected {METHOD_NAME} or a baseline name)"))
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for Method {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

pub struct BatchSpec<'a> {
    pub method: Method,
    pub engine: EngineConfig,
    pub prompts: &'a PromptSet,
    pub params: &'a CompletionParams,
    pub self_ask_cap: usize,
}

impl<'a> BatchSpec<'a> {
    pub fn new(method: Method, engine: EngineConfig, prompts: &'a PromptSet, params: &'a CompletionParams) -> Self {
        BatchSpec { method, engine, prompts, params, self_ask_cap: DEFAULT_SELF_ASK_CAP }
    }
}

pub fn run_one(
    spec: &BatchSpec<'_>,
    record: &DatasetRecord,
    provider: &dyn LanguageModel,
    scorer: &dyn ComplexityScorer,
) -> Trajectory {
    match spec.method {
        Method::MicroAct => Engine::new(spec.engine.clone(), provider, scorer, spec.prompts, spec.params).run(record),
        Method::Baseline(b) => BaselineRunner {
            provider,
            prompts: spec.prompts,
            params: spec.params,
            self_ask_cap: spec.self_ask_cap,
        }
        .run(b, record),
    }
}

/// The width actually used: order-sensitive providers always run sequentially.
pub fn effective_execution(provider: &dyn LanguageModel, width: usize) -> Execution {
    if provider.order_sensitive() {
        Execution::Sequential
    } else {
        Execution::with_width(width)
    }
}

pub fn run_batch(
    spec: &BatchSpec<'_>,
    records: &[DatasetRecord],
    provider: &dyn LanguageModel,
    scorer: &dyn ComplexityScorer,
    width: usize,
) -> Vec<Trajectory> {
    run_batch_with(spec, records, provider, scorer, effective_execution(provider, width))
}

/// As [`run_batch`] with an explicit execution mode (no order-sensitivity check).
pub fn run_batch_with(
    spec: &BatchSpec<'_>,
    records: &[DatasetRecord],
    provider: &dyn LanguageModel,
    scorer: &dyn ComplexityScorer,
    exec: Execution,
) -> Vec<Trajectory> {
    let mut out = parallel::map(records, exec, |r| run_one(spec, r, provider, scorer));
    out.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    out
}

pub fn write_trajectories(path: &std::path::Path, trajectories: &[Trajectory]) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in trajectories {
        writeln!(w, "{}", t.to_json_line())?;
    }
    w.flush()
}

pub fn read_trajectories(path: &std::path::Path) -> std::io::Result<Vec<Trajectory>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}
