//! Context complexity scoring and the decomposition stopping rules.
//!
//! A decomposition is triggered only when the score of the current context is
//! strictly above the threshold, and every accepted decomposition must strictly
//! lower the score of each child relative to its parent. Together with a finite
//! starting score this bounds the number of decompositions along any branch.

pub mod perplexity;
pub mod transition;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use perplexity::{perplexity_from_logprobs, PerplexityCache, PerplexityClient, PerplexitySource};
pub use transition::{simulate_transition_step, TransitionModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComplexityError {
    #[error("log-probability sequence is empty")]
    EmptySequence,
    #[error("log-probability {value} at position {index} is positive")]
    InvalidLogProb { index: usize, value: f64 },
    #[error("perplexity scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("score basis {score} does not match threshold basis {threshold}")]
    BasisMismatch { score: ScoreBasis, threshold: ScoreBasis },
    #[error("invalid transition kernel: {0}")]
    InvalidKernel(String),
    #[error("no schedule value reaches the threshold {tau}")]
    NotReached { tau: f64 },
    #[error("schedule is not strictly decreasing at position {0}")]
    NotDecreasing(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreBasis {
    TokenLength,
    Perplexity,
    Composite,
}

impl fmt::Display for ScoreBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreBasis::TokenLength => "token_length",
            ScoreBasis::Perplexity => "perplexity",
            ScoreBasis::Composite => "composite",
        })
    }
}

impl std::str::FromStr for ScoreBasis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "token_length" => Ok(ScoreBasis::TokenLength),
            "perplexity" => Ok(ScoreBasis::Perplexity),
            "composite" => Ok(ScoreBasis::Composite),
            other => Err(format!("unknown scorer basis `{other}`")),
        }
    }
}

impl ScoreBasis {
    /// Shipped default threshold for each basis.
    pub fn default_threshold(self) -> f64 {
        match self {
            ScoreBasis::TokenLength => 100.0,
            ScoreBasis::Perplexity => 50.0,
            ScoreBasis::Composite => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityScore {
    pub value: f64,
    pub basis: ScoreBasis,
}

impl ComplexityScore {
    pub fn new(value: f64, basis: ScoreBasis) -> Self {
        debug_assert!(value >= 0.0);
        ComplexityScore { value, basis }
    }

    pub fn tokens(value: f64) -> Self {
        Self::new(value, ScoreBasis::TokenLength)
    }
}

/// Threshold below which the model is assumed to handle a context confidently.
pub type Threshold = ComplexityScore;

/// Whitespace token count.
pub fn token_length(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Strict `current > threshold` on a shared basis.
pub fn should_decompose(current: &ComplexityScore, threshold: &Threshold) -> Result<bool, ComplexityError> {
    if current.basis != threshold.basis {
        return Err(ComplexityError::BasisMismatch { score: current.basis, threshold: threshold.basis });
    }
    Ok(current.value > threshold.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonotoneVerdict {
    Ok,
    Violation { index: usize },
}

/// Every child must score strictly below its parent. Reports the first
/// offending child. Mixed bases count as a violation at the first mismatch.
pub fn verify_monotone(parent: &ComplexityScore, children: &[ComplexityScore]) -> MonotoneVerdict {
    match children
        .iter()
        .position(|c| c.basis != parent.basis || c.value >= parent.value)
    {
        Some(index) => MonotoneVerdict::Violation { index },
        None => MonotoneVerdict::Ok,
    }
}

/// First index whose value is at or below `tau`.
pub fn stopping_turn(schedule: &[f64], tau: f64) -> Result<usize, ComplexityError> {
    if let Some(i) = schedule.windows(2).position(|w| w[1] >= w[0]) {
        return Err(ComplexityError::NotDecreasing(i + 1));
    }
    schedule
        .iter()
        .position(|&c| c <= tau)
        .ok_or(ComplexityError::NotReached { tau })
}

/// Anything that can score a piece of context.
pub trait ComplexityScorer: Send + Sync {
    fn basis(&self) -> ScoreBasis;
    fn score(&self, text: &str) -> Result<ComplexityScore, ComplexityError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TokenLengthScorer;

impl ComplexityScorer for TokenLengthScorer {
    fn basis(&self) -> ScoreBasis {
        ScoreBasis::TokenLength
    }

    fn score(&self, text: &str) -> Result<ComplexityScore, ComplexityError> {
        Ok(ComplexityScore::tokens(token_length(text) as f64))
    }
}

/// Scores by perplexity, consulting the cache first and the remote service
/// (if any) on a miss. Service results are written back into the cache.
pub struct PerplexityScorer {
    cache: PerplexityCache,
    service: Option<Box<dyn PerplexitySource>>,
}

impl PerplexityScorer {
    pub fn new(cache: PerplexityCache, service: Option<Box<dyn PerplexitySource>>) -> Self {
        PerplexityScorer { cache, service }
    }

    pub fn cache(&self) -> &PerplexityCache {
        &self.cache
    }

    fn perplexity(&self, text: &str) -> Result<f64, ComplexityError> {
        if let Some(hit) = self.cache.get(text) {
            return Ok(hit.perplexity);
        }
        let Some(service) = &self.service else {
            return Err(ComplexityError::ScorerUnavailable("no cached perplexity and no service configured".into()));
        };
        let resp = service.perplexity(text)?;
        self.cache.insert(text, resp.perplexity, resp.token_count);
        Ok(resp.perplexity)
    }
}

impl ComplexityScorer for PerplexityScorer {
    fn basis(&self) -> ScoreBasis {
        ScoreBasis::Perplexity
    }

    fn score(&self, text: &str) -> Result<ComplexityScore, ComplexityError> {
        Ok(ComplexityScore::new(self.perplexity(text)?, ScoreBasis::Perplexity))
    }
}

/// Min-max bounds used to normalize one axis of the composite score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Range> {
        values.into_iter().fold(None, |acc, v| match acc {
            None => Some(Range { min: v, max: v }),
            Some(r) => Some(Range { min: r.min.min(v), max: r.max.max(v) }),
        })
    }

    /// Clamped below at 0; values above the fitted max may exceed 1.
    pub fn normalize(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span <= 0.0 {
            return 0.0;
        }
        ((v - self.min) / span).max(0.0)
    }
}

/// `w_len * norm(length) + w_ppl * norm(perplexity)`.
pub struct CompositeScorer {
    pub perplexity: PerplexityScorer,
    pub length_range: Range,
    pub perplexity_range: Range,
    pub length_weight: f64,
    pub perplexity_weight: f64,
}

impl CompositeScorer {
    /// Fits normalization ranges over a corpus of texts. Every text must be
    /// scorable by the perplexity scorer.
    pub fn fit<'a>(perplexity: PerplexityScorer, corpus: impl IntoIterator<Item = &'a str>) -> Result<Self, ComplexityError> {
        let mut lens = Vec::new();
        let mut ppls = Vec::new();
        for text in corpus {
            lens.push(token_length(text) as f64);
            ppls.push(perplexity.perplexity(text)?);
        }
        let unit = Range { min: 0.0, max: 1.0 };
        Ok(CompositeScorer {
            perplexity,
            length_range: Range::fit(lens).unwrap_or(unit),
            perplexity_range: Range::fit(ppls).unwrap_or(unit),
            length_weight: 0.5,
            perplexity_weight: 0.5,
        })
    }
}

impl ComplexityScorer for CompositeScorer {
    fn basis(&self) -> ScoreBasis {
        ScoreBasis::Composite
    }

    fn score(&self, text: &str) -> Result<ComplexityScore, ComplexityError> {
        let len = self.length_range.normalize(token_length(text) as f64);
        let ppl = self.perplexity_range.normalize(self.perplexity.perplexity(text)?);
        Ok(ComplexityScore::new(
            self.length_weight * len + self.perplexity_weight * ppl,
            ScoreBasis::Composite,
        ))
    }
}
