use std::fmt;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{estimated_usage, CompletionParams, CompletionResult, LanguageModel, ProviderError};
use crate::domain::UsageRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Full chat-completions URL, e.g. `https://host/v1/chat/completions`.
    pub endpoint: String,
    pub credential_env: String,
    pub max_retries: u32,
    pub timeout_ms: u64,
    pub backoff_base_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            credential_env: "OPENAI_API_KEY".to_string(),
            max_retries: 3,
            timeout_ms: 60_000,
            backoff_base_ms: 500,
        }
    }
}

impl HttpConfig {
    /// Upper bound on wall time of one `complete` call.
    pub fn worst_case(&self) -> Duration {
        let attempts = self.max_retries as u64 + 1;
        let backoff: u64 = (0..self.max_retries).map(|i| self.backoff_base_ms << i).sum();
        Duration::from_millis(attempts * self.timeout_ms + backoff)
    }
}

/// Chat-completions client. The credential is read once at construction and
/// never printed.
pub struct HttpProvider {
    config: HttpConfig,
    credential: Option<String>,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpProvider")
            .field("config", &self.config)
            .field("credential", &self.credential.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

enum Attempt {
    Done(CompletionResult),
    Retry(String),
    Fatal(ProviderError),
}

impl HttpProvider {
    /// Fails with `MissingCredential` if the configured variable is unset.
    pub fn from_env(config: HttpConfig) -> Result<Self, ProviderError> {
        let credential = std::env::var(&config.credential_env)
            .map_err(|_| ProviderError::MissingCredential(config.credential_env.clone()))?;
        Ok(Self::with_credential(config, Some(credential)))
    }

    pub fn with_credential(config: HttpConfig, credential: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpProvider { config, credential, agent }
    }

    fn attempt(&self, prompt: &str, params: &CompletionParams) -> Attempt {
        let body = ChatRequest {
            model: &params.model_name,
            messages: [Message { role: "user", content: prompt }],
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: params.max_output_tokens,
        };
        let started = Instant::now();
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.credential {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Attempt::Fatal(ProviderError::Timeout(self.config.timeout_ms)),
            Err(e) => return Attempt::Retry(format!("transport: {e}")),
        };
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if status != 200 {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Attempt::Fatal(ProviderError::failed(format!("HTTP {status}: {detail}")));
        }
        let parsed: ChatResponse = match resp.body_mut().read_json() {
            Ok(p) => p,
            Err(ureq::Error::Timeout(_)) => return Attempt::Fatal(ProviderError::Timeout(self.config.timeout_ms)),
            Err(e) => return Attempt::Fatal(ProviderError::failed(format!("malformed response: {e}"))),
        };
        let wall_time_ms = started.elapsed().as_millis() as u64;
        let Some(text) = parsed.choices.into_iter().next().and_then(|c| c.message.content) else {
            return Attempt::Fatal(ProviderError::failed("response has no message content"));
        };
        let usage = match parsed.usage {
            Some(u) => UsageRecord {
                input_tokens: u.prompt_tokens,
                output_tokens: u.completion_tokens,
                wall_time_ms,
                provider_calls: 1,
                estimated_calls: 0,
            },
            None => estimated_usage(prompt, &text, wall_time_ms),
        };
        Attempt::Done(CompletionResult { text, usage })
    }
}

impl LanguageModel for HttpProvider {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<CompletionResult, ProviderError> {
        if prompt.is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        let mut causes = Vec::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(self.config.backoff_base_ms << (attempt - 1)));
            }
            match self.attempt(prompt, params) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(cause) => {
                    log::warn!("completion attempt {} failed: {cause}", attempt + 1);
                    causes.push(cause);
                }
            }
        }
        Err(ProviderError::Failed {
            message: format!("giving up after {} attempts", self.config.max_retries + 1),
            causes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn debug_redacts_credential() {
        let p = HttpProvider::with_credential(HttpConfig::default(), Some("sk-secret".into()));
        let dbg = format!("{p:?}");
        assert!(!dbg.contains("sk-secret"));
        assert!(dbg.contains("redacted"));
    }

    #[test]
    fn missing_credential() {
        let cfg = HttpConfig { credential_env: "KCQA_TEST_UNSET_VARIABLE".into(), ..Default::default() };
        assert_eq!(
            HttpProvider::from_env(cfg).unwrap_err(),
            ProviderError::MissingCredential("KCQA_TEST_UNSET_VARIABLE".into())
        );
    }

    #[test]
    fn worst_case_budget() {
        let cfg = HttpConfig { max_retries: 2, timeout_ms: 100, backoff_base_ms: 10, ..Default::default() };
        assert_eq!(cfg.worst_case(), Duration::from_millis(3 * 100 + 10 + 20));
    }
}
