//! Model gateway: the provider trait, the response cache contract, and the
//! schema-validated call path with retries and token accounting.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::state::ModelCall;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ExtractStructure,
    Align,
    Verify,
    Aware,
    Decompose,
    Hypothesize,
    Synthesize,
    DirectAnswer,
    /// Atomic-proposition decomposition used by the scorer.
    Propositions,
}

impl PromptKind {
    pub const ALL: [PromptKind; 9] = [
        PromptKind::ExtractStructure,
        PromptKind::Align,
        PromptKind::Verify,
        PromptKind::Aware,
        PromptKind::Decompose,
        PromptKind::Hypothesize,
        PromptKind::Synthesize,
        PromptKind::DirectAnswer,
        PromptKind::Propositions,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::ExtractStructure => "extract_structure",
            Self::Align => "align",
            Self::Verify => "verify",
            Self::Aware => "aware",
            Self::Decompose => "decompose",
            Self::Hypothesize => "hypothesize",
            Self::Synthesize => "synthesize",
            Self::DirectAnswer => "direct_answer",
            Self::Propositions => "propositions",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.label() == label)
    }

    /// Kinds issued by the reasoning loop (phase two).
    pub fn is_loop_kind(self) -> bool {
        matches!(self, Self::Aware | Self::Decompose | Self::Hypothesize)
    }

    pub fn is_fusion_kind(self) -> bool {
        matches!(self, Self::ExtractStructure | Self::Align | Self::Verify)
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Where a call's token counts came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSource {
    Provider,
    /// `split_whitespace().count()` over the prompt and the raw completion.
    WhitespaceEstimate,
}

pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub kind: PromptKind,
    pub rendered_prompt: String,
    pub temperature: f64,
    pub case_id: String,
    pub round: u32,
    /// Item discriminator (event, obstacle or query id) for per-item calls.
    pub item: Option<String>,
    /// Zero-based attempt index; not part of the cache key.
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// What a provider hands back for one attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying (rate limit, timeout, 5xx).
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("missing mock fixture for key {0}")]
    MissingFixture(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub trait LanguageModel: Sync {
    fn model_name(&self) -> &str;
    fn complete(&self, request: &ModelRequest) -> Result<Completion, BackendError>;
}

/// Content address of a completion: sha256 over kind, prompt, temperature and model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(kind: PromptKind, prompt: &str, temperature: f64, model: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(kind.label().as_bytes());
        hasher.update([0u8]);
        hasher.update(prompt.as_bytes());
        hasher.update([0u8]);
        hasher.update(temperature.to_bits().to_le_bytes());
        hasher.update([0u8]);
        hasher.update(model.as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest.iter() {
            hex.push_str(&format!("{byte:02x}"));
        }
        Self(hex)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedCompletion {
    pub raw_text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub token_source: TokenSource,
}

/// Shared completion cache. Implementations must tolerate concurrent callers;
/// racing writers for one key are acceptable since they store equal values.
pub trait ResponseCache: Sync {
    fn get(&self, key: &CacheKey) -> Option<CachedCompletion>;
    fn put(&self, key: &CacheKey, entry: &CachedCompletion);
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CallError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{kind} response failed validation after {} attempt(s): {reason}", raw_attempts.len())]
    Parse {
        kind: PromptKind,
        reason: String,
        raw_attempts: Vec<String>,
    },
    #[error("template error: {0}")]
    Template(String),
}

/// A validated response and its accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse<T> {
    pub raw_text: String,
    pub parsed: T,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub token_source: TokenSource,
    pub cache_hit: bool,
    pub attempts: u32,
    pub latency_ms: u64,
}

impl<T> ModelResponse<T> {
    pub fn call_record(&self, kind: PromptKind, item: Option<String>) -> ModelCall {
        ModelCall {
            kind,
            item,
            prompt_tokens: self.prompt_tokens,
            completion_tokens: self.completion_tokens,
            cache_hit: self.cache_hit,
            token_source: self.token_source,
            attempts: self.attempts,
            latency_ms: self.latency_ms,
        }
    }
}

/// Issues model calls with caching, retries and schema validation.
#[derive(Clone, Copy)]
pub struct Gateway<'a> {
    model: &'a dyn LanguageModel,
    cache: Option<&'a dyn ResponseCache>,
    temperature: f64,
    max_attempts: u32,
}

impl<'a> Gateway<'a> {
    pub fn new(model: &'a dyn LanguageModel) -> Self {
        Self {
            model,
            cache: None,
            temperature: crate::state::DEFAULT_TEMPERATURE,
            max_attempts: crate::state::DEFAULT_MAX_ATTEMPTS,
        }
    }

    pub fn with_cache(mut self, cache: Option<&'a dyn ResponseCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_attempts(mut self, attempts: u32) -> Self {
        self.max_attempts = attempts.max(1);
        self
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn model_name(&self) -> &str {
        self.model.model_name()
    }

    /// Sends `prompt` and validates the response with `parse`.
    ///
    /// Transient backend errors and validation failures are retried up to the
    /// attempt budget. Only validated responses are cached.
    pub fn call<T>(
        &self,
        kind: PromptKind,
        prompt: String,
        case_id: &str,
        round: u32,
        item: Option<&str>,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<ModelResponse<T>, CallError> {
        let key = CacheKey::new(kind, &prompt, self.temperature, self.model.model_name());
        if let Some(cache) = self.cache {
            if let Some(hit) = cache.get(&key) {
                match parse(&hit.raw_text) {
                    Ok(parsed) => {
                        return Ok(ModelResponse {
                            raw_text: hit.raw_text,
                            parsed,
                            prompt_tokens: hit.prompt_tokens,
                            completion_tokens: hit.completion_tokens,
                            token_source: hit.token_source,
                            cache_hit: true,
                            attempts: 0,
                            latency_ms: 0,
                        })
                    }
                    Err(reason) => {
                        log::warn!(
                            "ignoring cached {kind} entry that no longer validates: {reason}"
                        )
                    }
                }
            }
        }

        let mut request = ModelRequest {
            kind,
            rendered_prompt: prompt,
            temperature: self.temperature,
            case_id: case_id.into(),
            round,
            item: item.map(String::from),
            attempt: 0,
        };
        let mut raw_attempts = Vec::new();
        let mut last_reason = String::new();
        let mut prompt_tokens = 0;
        let mut completion_tokens = 0;
        let mut latency_ms = 0;
        let mut source = TokenSource::Provider;

        for attempt in 0..self.max_attempts {
            request.attempt = attempt;
            let completion = match self.model.complete(&request) {
                Ok(c) => c,
                Err(BackendError::Transient(msg)) => {
                    log::warn!("{kind} attempt {} failed transiently: {msg}", attempt + 1);
                    last_reason = msg;
                    continue;
                }
                Err(other) => return Err(other.into()),
            };
            let usage = completion.usage.unwrap_or_else(|| {
                source = TokenSource::WhitespaceEstimate;
                Usage {
                    prompt_tokens: estimate_tokens(&request.rendered_prompt),
                    completion_tokens: estimate_tokens(&completion.text),
                }
            });
            prompt_tokens += usage.prompt_tokens;
            completion_tokens += usage.completion_tokens;
            latency_ms += completion.latency_ms;

            match parse(&completion.text) {
                Ok(parsed) => {
                    if let Some(cache) = self.cache {
                        cache.put(
                            &key,
                            &CachedCompletion {
                                raw_text: completion.text.clone(),
                                prompt_tokens,
                                completion_tokens,
                                token_source: source,
                            },
                        );
                    }
                    return Ok(ModelResponse {
                        raw_text: completion.text,
                        parsed,
                        prompt_tokens,
                        completion_tokens,
                        token_source: source,
                        cache_hit: false,
                        attempts: attempt + 1,
                        latency_ms,
                    });
                }
                Err(reason) => {
                    log::warn!("{kind} attempt {} failed validation: {reason}", attempt + 1);
                    last_reason = reason;
                    raw_attempts.push(completion.text);
                }
            }
        }

        if raw_attempts.is_empty() {
            Err(BackendError::Unavailable(format!(
                "{kind}: {} attempt(s) exhausted, last error: {last_reason}",
                self.max_attempts
            ))
            .into())
        } else {
            Err(CallError::Parse {
                kind,
                reason: last_reason,
                raw_attempts,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeMap;
    use alloc::string::ToString;
    use alloc::vec;
    use core::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Mutex;

    struct Scripted {
        replies: Vec<Result<&'static str, BackendError>>,
        calls: AtomicU32,
    }

    impl LanguageModel for Scripted {
        fn model_name(&self) -> &str {
            "scripted"
        }
        fn complete(&self, _r: &ModelRequest) -> Result<Completion, BackendError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            let reply = self.replies[i.min(self.replies.len() - 1)].clone();
            reply.map(|t| Completion {
                text: t.to_string(),
                usage: None,
                latency_ms: 1,
            })
        }
    }

    #[derive(Default)]
    struct MemCache(Mutex<BTreeMap<CacheKey, CachedCompletion>>);

    impl ResponseCache for MemCache {
        fn get(&self, key: &CacheKey) -> Option<CachedCompletion> {
            self.0.lock().unwrap().get(key).cloned()
        }
        fn put(&self, key: &CacheKey, entry: &CachedCompletion) {
            self.0.lock().unwrap().insert(key.clone(), entry.clone());
        }
    }

    fn parse_num(raw: &str) -> Result<u32, String> {
        raw.trim().parse::<u32>().map_err(|e| e.to_string())
    }

    #[test]
    fn cache_identity() {
        let model = Scripted {
            replies: vec![Ok("7")],
            calls: AtomicU32::new(0),
        };
        let cache = MemCache::default();
        let gw = Gateway::new(&model).with_cache(Some(&cache));
        let first = gw
            .call(PromptKind::Aware, "p q r".into(), "c", 0, None, parse_num)
            .unwrap();
        assert!(!first.cache_hit);
        assert_eq!(first.prompt_tokens, 3);
        assert_eq!(first.token_source, TokenSource::WhitespaceEstimate);
        let second = gw
            .call(PromptKind::Aware, "p q r".into(), "c", 0, None, parse_num)
            .unwrap();
        assert!(second.cache_hit);
        assert_eq!(second.parsed, 7);
        assert_eq!((second.prompt_tokens, second.completion_tokens), (3, 1));
        assert_eq!(model.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn transient_errors_retried() {
        let model = Scripted {
            replies: vec![
                Err(BackendError::Transient("429".into())),
                Err(BackendError::Transient("429".into())),
                Ok("5"),
            ],
            calls: AtomicU32::new(0),
        };
        let r = Gateway::new(&model)
            .call(PromptKind::Verify, "x".into(), "c", 0, None, parse_num)
            .unwrap();
        assert_eq!(r.parsed, 5);
        assert_eq!(r.attempts, 3);
    }

    #[test]
    fn transport_exhaustion_is_unavailable() {
        let model = Scripted {
            replies: vec![Err(BackendError::Transient("timeout".into()))],
            calls: AtomicU32::new(0),
        };
        let err = Gateway::new(&model)
            .call(PromptKind::Verify, "x".into(), "c", 0, None, parse_num)
            .unwrap_err();
        assert!(matches!(
            err,
            CallError::Backend(BackendError::Unavailable(_))
        ));
    }

    #[test]
    fn schema_exhaustion_keeps_raw_attempts() {
        let model = Scripted {
            replies: vec![Ok("nope"), Ok("still nope"), Ok("no")],
            calls: AtomicU32::new(0),
        };
        let cache = MemCache::default();
        let err = Gateway::new(&model)
            .with_cache(Some(&cache))
            .call(
                PromptKind::ExtractStructure,
                "x".into(),
                "c",
                0,
                None,
                parse_num,
            )
            .unwrap_err();
        match err {
            CallError::Parse {
                raw_attempts, kind, ..
            } => {
                assert_eq!(kind, PromptKind::ExtractStructure);
                assert_eq!(raw_attempts, vec!["nope", "still nope", "no"]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(cache.0.lock().unwrap().is_empty());
    }

    #[test]
    fn fatal_errors_not_retried() {
        let model = Scripted {
            replies: vec![Err(BackendError::MissingFixture("k".into())), Ok("1")],
            calls: AtomicU32::new(0),
        };
        let err = Gateway::new(&model)
            .call(PromptKind::Aware, "x".into(), "c", 0, None, parse_num)
            .unwrap_err();
        assert!(matches!(
            err,
            CallError::Backend(BackendError::MissingFixture(_))
        ));
        assert_eq!(model.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn cache_key_separates_inputs() {
        let a = CacheKey::new(PromptKind::Aware, "p", 0.0, "m");
        assert_eq!(a, CacheKey::new(PromptKind::Aware, "p", 0.0, "m"));
        assert_ne!(a, CacheKey::new(PromptKind::Verify, "p", 0.0, "m"));
        assert_ne!(a, CacheKey::new(PromptKind::Aware, "p", 0.7, "m"));
        assert_ne!(a, CacheKey::new(PromptKind::Aware, "p", 0.0, "n"));
        assert_eq!(a.as_str().len(), 64);
    }
}
