use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::model::CorpusMeta;
use crate::query_plan::CountQuery;

use super::{Capabilities, CountBackend, CountError, CountResult};

/// Corpus sizes published for the hosted indices.
pub fn known_corpus_meta(index: &str) -> Option<CorpusMeta> {
    let (docs, tokens) = match index {
        "v4_dolma-v1_7_llama" => (3_403_336_408, 2_604_642_372_173),
        "v4_rpj_llama_s4" => (931_361_530, 1_385_942_948_192),
        _ => return None,
    };
    Some(CorpusMeta {
        corpus_id: index.to_string(),
        total_tokens: tokens,
        total_docs: docs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    pub index: String,
    /// Concurrent requests allowed in flight.
    pub max_inflight: usize,
    /// Request budget per second; `None` for unlimited.
    pub requests_per_second: Option<f64>,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
    /// Extra top-level fields merged into every request body.
    #[serde(default)]
    pub extra_params: Map<String, Value>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            url: "https://api.infini-gram.io/".into(),
            index: "v4_dolma-v1_7_llama".into(),
            max_inflight: 4,
            requests_per_second: Some(10.0),
            max_retries: 6,
            backoff_base_ms: 500,
            timeout_secs: 60,
            extra_params: Map::new(),
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Deserialize)]
struct CountResponse {
    count: Option<i64>,
    #[serde(default)]
    approx: bool,
    #[serde(default)]
    error: Option<String>,
}

/// HTTP client for an n-gram count service.
///
/// Requests are JSON `{index, query_type: "count", query}` where `query` is
/// the CNF as nested lists of literals; responses are `{count, approx}`.
/// HTTP 429 and 5xx responses are retried with exponential backoff.
pub struct RemoteBackend {
    cfg: RemoteConfig,
    http: reqwest::blocking::Client,
    inflight: Semaphore,
    next_slot: Mutex<Instant>,
    // Unary clause counts seen so far, for flagging estimated co-occurrences.
    clause_counts: Mutex<HashMap<Vec<String>, u64>>,
    meta: CorpusMeta,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self, CountError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| CountError::ServiceUnavailable(e.to_string()))?;
        let meta = known_corpus_meta(&cfg.index).unwrap_or_else(|| CorpusMeta {
            corpus_id: cfg.index.clone(),
            ..Default::default()
        });
        Ok(RemoteBackend {
            inflight: Semaphore::new(cfg.max_inflight),
            next_slot: Mutex::new(Instant::now()),
            clause_counts: Mutex::new(HashMap::new()),
            http,
            meta,
            cfg,
        })
    }

    /// Overrides the corpus size metadata (for indices not in the built-in table).
    pub fn with_corpus_meta(mut self, meta: CorpusMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    /// The JSON body sent for `query`.
    pub fn request_body(&self, query: &CountQuery) -> Value {
        let mut body = Map::new();
        body.insert("index".into(), json!(self.cfg.index));
        body.insert("query_type".into(), json!("count"));
        body.insert("query".into(), json!(query.cnf()));
        for (k, v) in &self.cfg.extra_params {
            body.entry(k.clone()).or_insert_with(|| v.clone());
        }
        Value::Object(body)
    }

    fn throttle(&self) {
        let Some(rps) = self.cfg.requests_per_second.filter(|r| *r > 0.0) else {
            return;
        };
        let interval = Duration::from_secs_f64(1.0 / rps);
        let wait_until = {
            let mut next = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + interval;
            slot
        };
        let now = Instant::now();
        if wait_until > now {
            thread::sleep(wait_until - now);
        }
    }

    fn send_once(&self, body: &Value) -> Result<CountResult, CountError> {
        let _permit = self.inflight.acquire();
        self.throttle();
        let resp = self
            .http
            .post(&self.cfg.url)
            .json(body)
            .send()
            .map_err(|e| CountError::ServiceUnavailable(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(CountError::RateLimited);
        }
        let text = resp
            .text()
            .map_err(|e| CountError::ServiceUnavailable(e.to_string()))?;
        if status.is_server_error() {
            return Err(CountError::ServiceUnavailable(format!("{status}: {text}")));
        }
        if !status.is_success() {
            return Err(CountError::MalformedResponse(format!("{status}: {text}")));
        }
        let parsed: CountResponse = serde_json::from_str(&text)
            .map_err(|e| CountError::MalformedResponse(format!("{e}: {text}")))?;
        match (parsed.count, parsed.error) {
            (Some(c), None) if c >= 0 => Ok(CountResult {
                count: c as u64,
                approx: parsed.approx,
            }),
            (Some(c), None) => Err(CountError::MalformedResponse(format!("negative count {c}"))),
            (_, Some(err)) => Err(CountError::MalformedResponse(err)),
            (None, None) => Err(CountError::MalformedResponse(format!("no count in {text}"))),
        }
    }
}

impl CountBackend for RemoteBackend {
    fn corpus_meta(&self) -> CorpusMeta {
        self.meta.clone()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn count(&self, query: &CountQuery) -> Result<CountResult, CountError> {
        let caps = self.capabilities();
        if query.cnf().iter().any(|c| c.len() > caps.max_or_components)
            || query.window_tokens() > caps.max_window_tokens
        {
            return Err(CountError::Unsupported(query.canonical()));
        }
        let body = self.request_body(query);
        let mut attempt = 0;
        let mut result = loop {
            match self.send_once(&body) {
                Ok(r) => break r,
                Err(e @ (CountError::RateLimited | CountError::ServiceUnavailable(_)))
                    if attempt < self.cfg.max_retries =>
                {
                    let delay = self.cfg.backoff_base_ms.saturating_mul(1 << attempt.min(16));
                    log::debug!("count retry {} after {e}: sleeping {delay}ms", attempt + 1);
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };

        let mut seen = self.clause_counts.lock().unwrap();
        if query.is_unary() {
            seen.insert(query.cnf()[0].clone(), result.count);
        } else if query
            .cnf()
            .iter()
            .any(|c| seen.get(c).is_some_and(|&n| n > caps.approx_threshold))
        {
            result.approx = true;
        }
        Ok(result)
    }
}
