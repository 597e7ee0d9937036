//! Language-model backends behind one blocking interface.

mod http;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complexity::token_length;
use crate::domain::UsageRecord;

pub use http::{HttpConfig, HttpProvider};
pub use scripted::{scripted_load, ScriptedProvider, ScriptedReply};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider error: {message}")]
    Failed { message: String, causes: Vec<String> },
    #[error("provider timed out after {0} ms")]
    Timeout(u64),
    #[error("prompt must be non-empty")]
    EmptyPrompt,
    #[error("scripted provider exhausted after {0} replies")]
    Exhausted(usize),
    #[error("missing credential: environment variable `{0}` is not set")]
    MissingCredential(String),
}

impl ProviderError {
    pub fn failed(message: impl Into<String>) -> Self {
        ProviderError::Failed { message: message.into(), causes: Vec::new() }
    }
}

/// Decoding parameters. Defaults are greedy decoding with a 512-token cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
    pub model_name: String,
}

impl Default for CompletionParams {
    fn default() -> Self {
        CompletionParams {
            temperature: 0.0,
            top_p: 1.0,
            max_output_tokens: 512,
            model_name: "gpt-4o-mini".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResult {
    pub text: String,
    pub usage: UsageRecord,
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<CompletionResult, ProviderError>;

    /// Whether concurrent callers may observe a different reply order than a
    /// sequential run would. FIFO test doubles return true.
    fn order_sensitive(&self) -> bool {
        false
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<CompletionResult, ProviderError> {
        (**self).complete(prompt, params)
    }
    fn order_sensitive(&self) -> bool {
        (**self).order_sensitive()
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Box<T> {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<CompletionResult, ProviderError> {
        (**self).complete(prompt, params)
    }
    fn order_sensitive(&self) -> bool {
        (**self).order_sensitive()
    }
}

/// Usage for one call whose token counts are estimated from whitespace.
pub fn estimated_usage(prompt: &str, reply: &str, wall_time_ms: u64) -> UsageRecord {
    UsageRecord {
        input_tokens: token_length(prompt) as u64,
        output_tokens: token_length(reply) as u64,
        wall_time_ms,
        provider_calls: 1,
        estimated_calls: 1,
    }
}

/// Prompt-driven deterministic provider: the reply is a pure function of the
/// prompt, so it is safe under concurrent fan-out.
pub struct FnProvider<F> {
    f: F,
}

impl<F> FnProvider<F>
where
    F: Fn(&str) -> Result<String, ProviderError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        FnProvider { f }
    }
}

impl<F> LanguageModel for FnProvider<F>
where
    F: Fn(&str) -> Result<String, ProviderError> + Send + Sync,
{
    fn complete(&self, prompt: &str, _params: &CompletionParams) -> Result<CompletionResult, ProviderError> {
        if prompt.is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        let text = (self.f)(prompt)?;
        let usage = UsageRecord { estimated_calls: 0, ..estimated_usage(prompt, &text, 0) };
        Ok(CompletionResult { text, usage })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params() {
        let p = CompletionParams::default();
        assert_eq!(p.temperature, 0.0);
        assert_eq!(p.top_p, 1.0);
        assert_eq!(p.max_output_tokens, 512);
    }

    #[test]
    fn fn_provider_is_prompt_driven() {
        let p = FnProvider::new(|prompt: &str| Ok(format!("echo {}", prompt.len())));
        let a = p.complete("abc", &CompletionParams::default()).unwrap();
        assert_eq!(a.text, "echo 3");
        assert_eq!(a.usage.provider_calls, 1);
        assert_eq!(p.complete("", &CompletionParams::default()), Err(ProviderError::EmptyPrompt));
    }
}
