//! Perplexity formula, the on-disk perplexity cache and the HTTP client for
//! the external scoring service.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::RwLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ComplexityError;

/// `exp(-mean(logprobs))` over natural-log per-token conditional probabilities.
pub fn perplexity_from_logprobs(logprobs: &[f64]) -> Result<f64, ComplexityError> {
    if logprobs.is_empty() {
        return Err(ComplexityError::EmptySequence);
    }
    if let Some((index, &value)) = logprobs.iter().enumerate().find(|(_, &v)| v > 0.0 || v.is_nan()) {
        return Err(ComplexityError::InvalidLogProb { index, value });
    }
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Ok((-mean).exp())
}

/// Hex SHA-256 of the UTF-8 text; the cache key.
pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub text_hash: String,
    pub perplexity: f64,
    pub token_count: u64,
}

/// Read-mostly perplexity cache keyed by text hash. Writers are serialized.
#[derive(Debug, Default)]
pub struct PerplexityCache {
    entries: RwLock<HashMap<String, CacheEntry>>,
}

impl PerplexityCache {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let file = fs::File::open(path)?;
        let mut entries = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
            })?;
            entries.insert(entry.text_hash.clone(), entry);
        }
        Ok(PerplexityCache { entries: RwLock::new(entries) })
    }

    /// Writes entries sorted by hash so the file is reproducible.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let entries = self.entries.read().expect("cache lock");
        let mut sorted: Vec<&CacheEntry> = entries.values().collect();
        sorted.sort_by(|a, b| a.text_hash.cmp(&b.text_hash));
        let mut out = fs::File::create(path)?;
        for e in sorted {
            writeln!(out, "{}", serde_json::to_string(e).expect("entry serializes"))?;
        }
        Ok(())
    }

    pub fn get(&self, text: &str) -> Option<CacheEntry> {
        self.entries.read().expect("cache lock").get(&text_hash(text)).cloned()
    }

    pub fn insert(&self, text: &str, perplexity: f64, token_count: u64) {
        let text_hash = text_hash(text);
        self.entries.write().expect("cache lock").insert(
            text_hash.clone(),
            CacheEntry { text_hash, perplexity, token_count },
        );
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityResponse {
    pub perplexity: f64,
    pub token_count: u64,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceHealth {
    pub model_id: String,
    pub ready: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ServiceError {
    code: String,
    message: String,
}

pub trait PerplexitySource: Send + Sync {
    fn perplexity(&self, text: &str) -> Result<PerplexityResponse, ComplexityError>;
}

/// Client for the perplexity service (`POST /perplexity`,
/// `POST /perplexity/batch`, `GET /health`).
pub struct PerplexityClient {
    base_url: String,
    agent: ureq::Agent,
}

impl PerplexityClient {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        PerplexityClient { base_url: base_url.trim_end_matches('/').to_string(), agent }
    }

    fn unavailable(e: impl std::fmt::Display) -> ComplexityError {
        ComplexityError::ScorerUnavailable(e.to_string())
    }

    fn post<T: for<'de> Deserialize<'de>>(&self, path: &str, body: serde_json::Value) -> Result<T, ComplexityError> {
        let url = format!("{}{}", self.base_url, path);
        let mut resp = self.agent.post(&url).send_json(&body).map_err(Self::unavailable)?;
        let status = resp.status().as_u16();
        if status != 200 {
            let detail = resp
                .body_mut()
                .read_json::<ServiceError>()
                .map(|e| format!("{} {}: {}", status, e.code, e.message))
                .unwrap_or_else(|_| format!("HTTP {status}"));
            return Err(Self::unavailable(detail));
        }
        resp.body_mut().read_json::<T>().map_err(Self::unavailable)
    }

    pub fn batch(&self, texts: &[String]) -> Result<Vec<PerplexityResponse>, ComplexityError> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Batch {
            Wrapped { results: Vec<PerplexityResponse> },
            Bare(Vec<PerplexityResponse>),
        }
        let results = match self.post("/perplexity/batch", serde_json::json!({ "texts": texts }))? {
            Batch::Wrapped { results } | Batch::Bare(results) => results,
        };
        if results.len() != texts.len() {
            return Err(Self::unavailable(format!(
                "batch returned {} results for {} texts",
                results.len(),
                texts.len()
            )));
        }
        Ok(results)
    }

    /// Scores every text not already cached and stores the results.
    pub fn warm_cache(&self, cache: &PerplexityCache, texts: &[String]) -> Result<usize, ComplexityError> {
        let missing: Vec<String> = texts.iter().filter(|t| cache.get(t).is_none()).cloned().collect();
        if missing.is_empty() {
            return Ok(0);
        }
        for (text, r) in missing.iter().zip(self.batch(&missing)?) {
            cache.insert(text, r.perplexity, r.token_count);
        }
        Ok(missing.len())
    }

    pub fn health(&self) -> Result<ServiceHealth, ComplexityError> {
        let url = format!("{}/health", self.base_url);
        let mut resp = self.agent.get(&url).call().map_err(Self::unavailable)?;
        if resp.status().as_u16() != 200 {
            return Err(Self::unavailable(format!("HTTP {}", resp.status().as_u16())));
        }
        resp.body_mut().read_json().map_err(Self::unavailable)
    }
}

impl PerplexitySource for PerplexityClient {
    fn perplexity(&self, text: &str) -> Result<PerplexityResponse, ComplexityError> {
        let r: PerplexityResponse = self.post("/perplexity", serde_json::json!({ "text": text }))?;
        if !(r.perplexity >= 1.0) || r.token_count == 0 {
            return Err(Self::unavailable(format!("service returned invalid score {r:?}")));
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn certain_model_has_perplexity_one() {
        assert_eq!(perplexity_from_logprobs(&[0.0; 7]).unwrap(), 1.0);
    }

    #[test]
    fn uniform_branching_factor() {
        for n in [1, 5, 64] {
            let p = perplexity_from_logprobs(&vec![(1.0f64 / 16.0).ln(); n]).unwrap();
            assert!((p - 16.0).abs() < 1e-12, "{p}");
        }
    }

    #[test]
    fn geometric_mean_fixture() {
        // (0.5 * 0.25 * 0.125)^(-1/3) = (2^-6)^(-1/3) = 4
        let p = perplexity_from_logprobs(&[0.5f64.ln(), 0.25f64.ln(), 0.125f64.ln()]).unwrap();
        assert!((p - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(perplexity_from_logprobs(&[]), Err(ComplexityError::EmptySequence));
        assert_eq!(
            perplexity_from_logprobs(&[-0.1, 0.2]),
            Err(ComplexityError::InvalidLogProb { index: 1, value: 0.2 })
        );
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ppl.jsonl");
        let cache = PerplexityCache::default();
        cache.insert("alpha", 12.5, 2);
        cache.insert("beta gamma", 3.25, 3);
        cache.save(&path).unwrap();
        let loaded = PerplexityCache::load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.get("alpha").unwrap().perplexity, 12.5);
        assert_eq!(loaded.get("beta gamma").unwrap().token_count, 3);
        let line = std::fs::read_to_string(&path).unwrap();
        assert!(line.contains(&text_hash("alpha")));
    }
}
