//! Chat-completion access over the OpenAI wire shape, with a response cache,
//! retry policy, usage ledger and an offline mock.

pub mod cache;
pub mod ledger;
pub mod mock;
pub mod transport;

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use augmenta_core::chat::{ChatRequest, Complete, RequestError};
use augmenta_core::eval::TargetModel;
use augmenta_core::eval::TrainPair;
use augmenta_core::rng::RngStream;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use cache::{key_of_value, ResponseCache};
use ledger::{estimate_tokens, Semaphore, UsageLedger};
use mock::{MockBackend, MockScript};
use transport::{is_transient, HttpTransport, Transport};

pub const API_KEY_ENV: &str = "AUGMENTA_API_KEY";
pub const BASE_URL_ENV: &str = "AUGMENTA_BASE_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub base_url: String,
    /// Never read from or written to config files; see [`BackendConfig::from_env`].
    #[serde(skip)]
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_parallel: usize,
    pub cache_dir: Option<PathBuf>,
    pub mock: bool,
    pub mock_script: Option<PathBuf>,
    /// Whether `/completions` returns echoed prompt log-probabilities.
    pub supports_logprobs: bool,
    pub backoff_base_ms: u64,
    pub budget_tokens: Option<u64>,
    /// Pivot language for back-translation.
    pub pivot_language: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            model: "gpt-3.5-turbo".into(),
            timeout_secs: 60,
            max_retries: 3,
            max_parallel: 4,
            cache_dir: None,
            mock: false,
            mock_script: None,
            supports_logprobs: false,
            backoff_base_ms: 500,
            budget_tokens: None,
            pivot_language: "German".into(),
        }
    }
}

impl BackendConfig {
    pub fn mock() -> Self {
        BackendConfig {
            mock: true,
            model: "mock".into(),
            ..Default::default()
        }
    }

    /// Fills the key from `AUGMENTA_API_KEY` and lets `AUGMENTA_BASE_URL`
    /// override the base URL.
    pub fn from_env(mut self) -> Self {
        if let Ok(k) = std::env::var(API_KEY_ENV) {
            if !k.trim().is_empty() {
                self.api_key = Some(k);
            }
        }
        if let Ok(u) = std::env::var(BASE_URL_ENV) {
            if !u.trim().is_empty() {
                self.base_url = u;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_parallel == 0 {
            return Err(BackendError::Config("max_parallel must be >= 1".into()));
        }
        if self.model.trim().is_empty() {
            return Err(BackendError::Config("model name is empty".into()));
        }
        if !self.mock && self.api_key.is_none() {
            return Err(BackendError::Config(format!(
                "no API key: set {API_KEY_ENV} or run with the mock backend"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {excerpt}")]
    Protocol { status: u16, excerpt: String },
    #[error("token budget exhausted: {used} used of {cap}")]
    Budget { used: u64, cap: u64 },
    #[error("backend does not expose log-probabilities")]
    Unsupported,
    #[error("no candidates to score")]
    NoCandidates,
    #[error("invalid request: {0}")]
    Request(#[from] RequestError),
    #[error("backend config: {0}")]
    Config(String),
}

fn excerpt(body: &str) -> String {
    let mut s: String = body.chars().take(200).collect();
    if s.len() < body.len() {
        s.push_str("...");
    }
    s
}

/// The one backend handle every stage shares.
pub struct LlmClient {
    cfg: BackendConfig,
    transport: Box<dyn Transport>,
    cache: Option<ResponseCache>,
    ledger: Arc<UsageLedger>,
    permits: Semaphore,
    mock: Option<MockBackend>,
    jitter: Mutex<RngStream>,
}

impl LlmClient {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        let transport = Box::new(HttpTransport::new(Duration::from_secs(cfg.timeout_secs.max(1))));
        Self::with_transport(cfg, transport)
    }

    pub fn with_transport(cfg: BackendConfig, transport: Box<dyn Transport>) -> Result<Self, BackendError> {
        cfg.validate()?;
        let mock = if cfg.mock {
            let script = match &cfg.mock_script {
                Some(p) => MockScript::load(p).map_err(|e| BackendError::Config(e.to_string()))?,
                None => MockScript::default(),
            };
            Some(MockBackend::new(script))
        } else {
            None
        };
        Ok(LlmClient {
            cache: cfg.cache_dir.clone().map(ResponseCache::new),
            permits: Semaphore::new(cfg.max_parallel),
            ledger: Arc::new(UsageLedger::new()),
            jitter: Mutex::new(RngStream::new(0x6a17)),
            transport,
            mock,
            cfg,
        })
    }

    /// Mock client answering from `script` first.
    pub fn scripted_mock(script: MockScript) -> Self {
        let mut c = Self::with_transport(
            BackendConfig::mock(),
            Box::new(HttpTransport::new(Duration::from_secs(1))),
        )
        .expect("mock config is valid");
        c.mock = Some(MockBackend::new(script));
        c
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn is_mock(&self) -> bool {
        self.mock.is_some()
    }

    /// The request as sent: the configured model fills an empty model field.
    pub fn resolve(&self, req: &ChatRequest) -> ChatRequest {
        let mut r = req.clone();
        if r.model.is_empty() {
            r.model = self.cfg.model.clone();
        }
        r
    }

    /// `model:key` for records produced from `req`.
    pub fn fingerprint(&self, req: &ChatRequest) -> String {
        let r = self.resolve(req);
        format!("{}:{}", r.model, cache::key_of(&r))
    }

    pub fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        req.validate()?;
        let req = self.resolve(req);
        let value = serde_json::to_value(&req).expect("request serializes");
        let key = key_of_value(&value);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            self.ledger.add_cache_hit();
            return Ok(hit);
        }
        let content = match &self.mock {
            Some(m) => {
                self.ledger.add_mock_request();
                m.respond(&req)
            }
            None => self.post_chat(&value)?,
        };
        if let Some(c) = &self.cache {
            // A cache that cannot be written only costs a repeat request later.
            let _ = c.put(&key, &value, &content);
        }
        Ok(content)
    }

    fn check_budget(&self) -> Result<(), BackendError> {
        if let Some(cap) = self.cfg.budget_tokens {
            let used = self.ledger.total_tokens();
            if used >= cap {
                return Err(BackendError::Budget { used, cap });
            }
        }
        Ok(())
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.cfg.backoff_base_ms.saturating_mul(1u64 << attempt.min(16));
        let jitter = self.jitter.lock().unwrap_or_else(|e| e.into_inner()).next_f64();
        Duration::from_millis((base as f64 * (0.5 + jitter)) as u64)
    }

    /// POSTs with retries on transport failures, 429 and 5xx:
    /// at most `max_retries + 1` attempts.
    fn post_with_retries(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        self.check_budget()?;
        let url = format!("{}/{path}", self.cfg.base_url.trim_end_matches('/'));
        let body_text = body.to_string();
        let _permit = self.permits.acquire();
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            self.ledger.add_request();
            match self.transport.post_json(&url, self.cfg.api_key.as_deref(), &body_text) {
                Err(e) => last = e,
                Ok(r) if is_transient(r.status) => last = format!("HTTP {}: {}", r.status, excerpt(&r.body)),
                Ok(r) if !(200..300).contains(&r.status) => {
                    return Err(BackendError::Protocol {
                        status: r.status,
                        excerpt: excerpt(&r.body),
                    })
                }
                Ok(r) => {
                    return serde_json::from_str(&r.body).map_err(|_| BackendError::Protocol {
                        status: r.status,
                        excerpt: excerpt(&r.body),
                    })
                }
            }
        }
        Err(BackendError::Transport {
            attempts: self.cfg.max_retries + 1,
            message: last,
        })
    }

    fn record_usage(&self, resp: &Value, prompt_text: &str, completion_text: &str) {
        let usage = &resp["usage"];
        let prompt = usage["prompt_tokens"]
            .as_u64()
            .unwrap_or_else(|| estimate_tokens(prompt_text));
        let completion = usage["completion_tokens"]
            .as_u64()
            .unwrap_or_else(|| estimate_tokens(completion_text));
        self.ledger.add_tokens(prompt, completion);
    }

    fn post_chat(&self, body: &Value) -> Result<String, BackendError> {
        let resp = self.post_with_retries("chat/completions", body)?;
        let content = resp["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Protocol {
                status: 200,
                excerpt: excerpt(&resp.to_string()),
            })?
            .to_string();
        let prompt_text: String = body["messages"]
            .as_array()
            .map(|ms| ms.iter().filter_map(|m| m["content"].as_str()).collect())
            .unwrap_or_default();
        self.record_usage(&resp, &prompt_text, &content);
        Ok(content)
    }

    /// Sum of token log-probabilities of each candidate after `context`.
    /// Each candidate is scored on its own request.
    pub fn candidate_logprobs(&self, context: &str, candidates: &[String]) -> Result<Vec<f64>, BackendError> {
        if candidates.is_empty() {
            return Err(BackendError::NoCandidates);
        }
        if self.mock.is_some() {
            return Ok(candidates.iter().map(|c| mock_logprob(context, c)).collect());
        }
        if !self.cfg.supports_logprobs {
            return Err(BackendError::Unsupported);
        }
        candidates.iter().map(|c| self.remote_logprob(context, c)).collect()
    }

    fn remote_logprob(&self, context: &str, candidate: &str) -> Result<f64, BackendError> {
        let prompt = format!("{context}{candidate}");
        let body = json!({
            "model": self.cfg.model,
            "prompt": prompt,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
        });
        let resp = self.post_with_retries("completions", &body)?;
        let lp = &resp["choices"][0]["logprobs"];
        let bad = || BackendError::Protocol {
            status: 200,
            excerpt: excerpt(&resp.to_string()),
        };
        let offsets = lp["text_offset"].as_array().ok_or_else(bad)?;
        let values = lp["token_logprobs"].as_array().ok_or_else(bad)?;
        let cut = context.len() as u64;
        let sum = offsets
            .iter()
            .zip(values)
            .filter(|(o, _)| o.as_u64().is_some_and(|o| o >= cut))
            .map(|(_, v)| v.as_f64().unwrap_or(0.0))
            .sum();
        self.record_usage(&resp, &prompt, "");
        Ok(sum)
    }
}

/// Deterministic stand-in: minus a hash-derived value in `[0, 1)` times the
/// candidate's token count.
fn mock_logprob(context: &str, candidate: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(context.as_bytes());
    h.update([0u8]);
    h.update(candidate.as_bytes());
    let d = h.finalize();
    let u = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    let tokens = candidate.split_whitespace().count().max(1) as f64;
    -((u >> 11) as f64 / (1u64 << 53) as f64) * tokens
}

impl Complete for LlmClient {
    type Error = BackendError;

    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.chat_complete(req)
    }
}

/// Candidate scoring straight from the backend's log-probabilities. `fit`
/// does nothing: remote models are not fine-tuned.
pub struct LogprobTargetModel<'a> {
    pub client: &'a LlmClient,
}

impl TargetModel for LogprobTargetModel<'_> {
    type Error = BackendError;

    fn fit(&mut self, _pairs: &[TrainPair]) -> Result<(), BackendError> {
        Ok(())
    }

    fn candidate_scores(&self, input: &str, candidates: &[String]) -> Result<Vec<f64>, BackendError> {
        self.client.candidate_logprobs(&format!("{input}\n"), candidates)
    }
}

#[cfg(test)]
mod tests {
    use super::transport::HttpReply;
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Replays canned replies in order, repeating the last one.
    struct Scripted {
        replies: Vec<Result<HttpReply, String>>,
        calls: AtomicUsize,
    }

    impl Scripted {
        fn new(replies: Vec<Result<HttpReply, String>>) -> Box<Self> {
            Box::new(Scripted {
                replies,
                calls: AtomicUsize::new(0),
            })
        }
    }

    impl Transport for Scripted {
        fn post_json(&self, _url: &str, _bearer: Option<&str>, _body: &str) -> Result<HttpReply, String> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst).min(self.replies.len() - 1);
            self.replies[i].clone()
        }
    }

    fn ok(content: &str) -> Result<HttpReply, String> {
        Ok(HttpReply {
            status: 200,
            body: json!({"choices":[{"message":{"role":"assistant","content":content}}],
                         "usage":{"prompt_tokens":7,"completion_tokens":3}})
            .to_string(),
        })
    }

    fn status(s: u16) -> Result<HttpReply, String> {
        Ok(HttpReply {
            status: s,
            body: "slow down".into(),
        })
    }

    fn http_cfg() -> BackendConfig {
        BackendConfig {
            api_key: Some("k".into()),
            backoff_base_ms: 0,
            ..Default::default()
        }
    }

    #[test]
    fn retry_after_429() {
        let c = LlmClient::with_transport(http_cfg(), Scripted::new(vec![status(429), ok("hi")])).unwrap();
        assert_eq!(c.chat_complete(&ChatRequest::user("x")).unwrap(), "hi");
        let s = c.ledger().snapshot();
        assert_eq!(s.request_count, 2);
        assert_eq!((s.prompt_tokens, s.completion_tokens), (7, 3));
    }

    #[test]
    fn attempts_capped() {
        let cfg = BackendConfig {
            max_retries: 2,
            ..http_cfg()
        };
        let c = LlmClient::with_transport(cfg, Scripted::new(vec![Err("refused".into())])).unwrap();
        assert!(matches!(
            c.chat_complete(&ChatRequest::user("x")),
            Err(BackendError::Transport { attempts: 3, .. })
        ));
        assert_eq!(c.ledger().snapshot().request_count, 3);
    }

    #[test]
    fn client_error_not_retried() {
        let c = LlmClient::with_transport(http_cfg(), Scripted::new(vec![status(400), ok("hi")])).unwrap();
        assert!(matches!(
            c.chat_complete(&ChatRequest::user("x")),
            Err(BackendError::Protocol { status: 400, .. })
        ));
        assert_eq!(c.ledger().snapshot().request_count, 1);
    }

    #[test]
    fn unparsable_body_is_protocol_error() {
        let bad = Ok(HttpReply {
            status: 200,
            body: "not json".into(),
        });
        let c = LlmClient::with_transport(http_cfg(), Scripted::new(vec![bad])).unwrap();
        assert!(matches!(
            c.chat_complete(&ChatRequest::user("x")),
            Err(BackendError::Protocol { .. })
        ));
    }

    #[test]
    fn cache_serves_second_call() {
        let d = tempfile::tempdir().unwrap();
        let cfg = BackendConfig {
            cache_dir: Some(d.path().to_path_buf()),
            ..http_cfg()
        };
        let c = LlmClient::with_transport(cfg, Scripted::new(vec![ok("a"), ok("b")])).unwrap();
        let req = ChatRequest::user("same");
        assert_eq!(c.chat_complete(&req).unwrap(), "a");
        assert_eq!(c.chat_complete(&req).unwrap(), "a");
        let s = c.ledger().snapshot();
        assert_eq!((s.request_count, s.cache_hits), (1, 1));
    }

    #[test]
    fn budget_blocks_requests() {
        let cfg = BackendConfig {
            budget_tokens: Some(5),
            ..http_cfg()
        };
        let c = LlmClient::with_transport(cfg, Scripted::new(vec![ok("a")])).unwrap();
        c.chat_complete(&ChatRequest::user("one")).unwrap();
        assert!(matches!(
            c.chat_complete(&ChatRequest::user("two")),
            Err(BackendError::Budget { used: 10, cap: 5 })
        ));
    }

    #[test]
    fn missing_key_fails_fast() {
        assert!(matches!(
            LlmClient::new(BackendConfig::default()),
            Err(BackendError::Config(_))
        ));
    }

    #[test]
    fn mock_never_touches_transport() {
        let c = LlmClient::with_transport(BackendConfig::mock(), Scripted::new(vec![Err("no".into())])).unwrap();
        c.chat_complete(&ChatRequest::user("hello")).unwrap();
        let s = c.ledger().snapshot();
        assert_eq!((s.request_count, s.mock_requests), (0, 1));
    }

    #[test]
    fn logprobs() {
        let c = LlmClient::with_transport(BackendConfig::mock(), Scripted::new(vec![Err("no".into())])).unwrap();
        let cands = vec!["yes".to_string(), "yes please".to_string()];
        let a = c.candidate_logprobs("q", &cands).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, c.candidate_logprobs("q", &cands).unwrap());
        assert_eq!(c.candidate_logprobs("q", &cands[..1]).unwrap().len(), 1);
        assert!(matches!(
            c.candidate_logprobs("q", &[]),
            Err(BackendError::NoCandidates)
        ));
        let h = LlmClient::with_transport(http_cfg(), Scripted::new(vec![ok("x")])).unwrap();
        assert!(matches!(
            h.candidate_logprobs("q", &cands),
            Err(BackendError::Unsupported)
        ));
    }

    #[test]
    fn remote_logprob_sums_candidate_tokens() {
        let body = json!({"choices":[{"logprobs":{
            "tokens":["Q",":"," yes"," please"],
            "token_logprobs":[null,-0.5,-1.25,-2.0],
            "text_offset":[0,1,2,6]}}]});
        let reply = Ok(HttpReply {
            status: 200,
            body: body.to_string(),
        });
        let cfg = BackendConfig {
            supports_logprobs: true,
            ..http_cfg()
        };
        let c = LlmClient::with_transport(cfg, Scripted::new(vec![reply])).unwrap();
        let s = c.candidate_logprobs("Q:", &[" yes please".to_string()]).unwrap();
        assert_eq!(s, vec![-3.25]);
    }
}
