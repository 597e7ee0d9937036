use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{estimated_usage, CompletionParams, CompletionResult, LanguageModel, ProviderError};
use crate::complexity::token_length;
use crate::domain::UsageRecord;

/// One canned reply. Unset token counts fall back to whitespace counts and the
/// call is flagged as estimated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedReply {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
    #[serde(default)]
    pub latency_ms: u64,
}

impl ScriptedReply {
    pub fn text(text: impl Into<String>) -> Self {
        ScriptedReply { text: text.into(), input_tokens: None, output_tokens: None, latency_ms: 0 }
    }

    pub fn with_tokens(text: impl Into<String>, input: u64, output: u64) -> Self {
        ScriptedReply { input_tokens: Some(input), output_tokens: Some(output), ..Self::text(text) }
    }
}

impl From<&str> for ScriptedReply {
    fn from(s: &str) -> Self {
        ScriptedReply::text(s)
    }
}

impl From<String> for ScriptedReply {
    fn from(s: String) -> Self {
        ScriptedReply::text(s)
    }
}

/// FIFO test double: replies come back in script order regardless of the
/// prompt, and every prompt is recorded.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    queue: Mutex<VecDeque<ScriptedReply>>,
    prompts: Mutex<Vec<String>>,
    served: Mutex<usize>,
}

impl ScriptedProvider {
    pub fn new(script: impl IntoIterator<Item = ScriptedReply>) -> Self {
        ScriptedProvider {
            queue: Mutex::new(script.into_iter().collect()),
            prompts: Mutex::new(Vec::new()),
            served: Mutex::new(0),
        }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log").clone()
    }

    pub fn calls(&self) -> usize {
        *self.served.lock().expect("served counter")
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script queue").len()
    }
}

/// Builds a scripted provider. `token_counts[i]` is the output token count of
/// reply `i`; the input count then defaults to the prompt's whitespace count.
pub fn scripted_load(replies: &[&str], token_counts: Option<&[u64]>) -> ScriptedProvider {
    ScriptedProvider::new(replies.iter().enumerate().map(|(i, r)| {
        let mut reply = ScriptedReply::text(*r);
        reply.output_tokens = token_counts.and_then(|c| c.get(i).copied());
        reply
    }))
}

impl LanguageModel for ScriptedProvider {
    fn complete(&self, prompt: &str, _params: &CompletionParams) -> Result<CompletionResult, ProviderError> {
        if prompt.is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        let mut queue = self.queue.lock().expect("script queue");
        self.prompts.lock().expect("prompt log").push(prompt.to_string());
        let mut served = self.served.lock().expect("served counter");
        let Some(reply) = queue.pop_front() else {
            return Err(ProviderError::Exhausted(*served));
        };
        *served += 1;
        let usage = match (reply.input_tokens, reply.output_tokens) {
            (None, None) => estimated_usage(prompt, &reply.text, reply.latency_ms),
            (input, output) => UsageRecord {
                input_tokens: input.unwrap_or(token_length(prompt) as u64),
                output_tokens: output.unwrap_or(token_length(&reply.text) as u64),
                wall_time_ms: reply.latency_ms,
                provider_calls: 1,
                estimated_calls: 0,
            },
        };
        Ok(CompletionResult { text: reply.text, usage })
    }

    fn order_sensitive(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(p: &ScriptedProvider) -> Result<CompletionResult, ProviderError> {
        p.complete("prompt text", &CompletionParams::default())
    }

    #[test]
    fn passthrough() {
        let p = scripted_load(&["hello"], None);
        let r = call(&p).unwrap();
        assert_eq!(r.text, "hello");
        assert_eq!(r.usage.provider_calls, 1);
        assert_eq!(p.prompts(), vec!["prompt text".to_string()]);
    }

    #[test]
    fn exhaustion() {
        let p = scripted_load(&["a", "b", "c"], None);
        for _ in 0..3 {
            assert!(call(&p).is_ok());
        }
        assert_eq!(call(&p), Err(ProviderError::Exhausted(3)));
        assert!(call(&scripted_load(&[], None)).is_err());
    }

    #[test]
    fn declared_token_counts() {
        let p = scripted_load(&["x", "y"], Some(&[10, 20]));
        assert_eq!(call(&p).unwrap().usage.output_tokens, 10);
        let second = call(&p).unwrap().usage;
        assert_eq!(second.output_tokens, 20);
        assert_eq!(second.estimated_calls, 0);
    }

    #[test]
    fn identical_scripts_identical_results() {
        let a = scripted_load(&["one two", "three"], None);
        let b = scripted_load(&["one two", "three"], None);
        for _ in 0..3 {
            assert_eq!(call(&a), call(&b));
        }
    }
}
