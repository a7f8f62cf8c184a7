//! Count backends.
//!
//! A [`CountBackend`] answers positive CNF [`CountQuery`]s. Two backends are
//! provided: [`RemoteBackend`], an HTTP client for an n-gram count service,
//! and [`LocalCorpus`], an in-memory index over a small corpus that doubles
//! as an exact oracle. [`CachedBackend`] adds a persistent cache in front of
//! either.

mod bundle;
mod cache;
mod local;
mod remote;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::CorpusMeta;
use crate::query_plan::{CountQuery, MAX_OR_COMPONENTS, MAX_WINDOW_TOKENS};

pub use bundle::{collect_bundle, BundleError};
pub use cache::{cache_key, CacheEntry, CacheStore, CachedBackend};
pub use local::{naive_count, naive_literal_positions, tokenize_words, LocalCorpus, Token, Tokenizer};
pub use remote::{known_corpus_meta, RemoteBackend, RemoteConfig};

/// Occurrence frequency above which the remote service estimates co-occurrences.
pub const APPROX_THRESHOLD: u64 = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub max_or_components: usize,
    pub max_window_tokens: u32,
    pub approx_threshold: u64,
}

impl Default for Capabilities {
    fn default() -> Self {
        Capabilities {
            max_or_components: MAX_OR_COMPONENTS,
            max_window_tokens: MAX_WINDOW_TOKENS,
            approx_threshold: APPROX_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountResult {
    pub count: u64,
    pub approx: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CountError {
    #[error("rate limited by count service")]
    RateLimited,
    #[error("count service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("query not supported by backend: {0}")]
    Unsupported(String),
    #[error("backend not reachable: {0}")]
    Offline(String),
}

/// Anything that can count CNF queries over one corpus snapshot.
///
/// Implementations must be safe to call concurrently and must return the
/// same result for repeated identical queries.
pub trait CountBackend: Send + Sync {
    fn corpus_meta(&self) -> CorpusMeta;

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn count(&self, query: &CountQuery) -> Result<CountResult, CountError>;
}

impl<T: CountBackend + ?Sized> CountBackend for &T {
    fn corpus_meta(&self) -> CorpusMeta {
        (**self).corpus_meta()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn count(&self, query: &CountQuery) -> Result<CountResult, CountError> {
        (**self).count(query)
    }
}

impl<T: CountBackend + ?Sized> CountBackend for Arc<T> {
    fn corpus_meta(&self) -> CorpusMeta {
        (**self).corpus_meta()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn count(&self, query: &CountQuery) -> Result<CountResult, CountError> {
        (**self).count(query)
    }
}

impl<T: CountBackend + ?Sized> CountBackend for Box<T> {
    fn corpus_meta(&self) -> CorpusMeta {
        (**self).corpus_meta()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn count(&self, query: &CountQuery) -> Result<CountResult, CountError> {
        (**self).count(query)
    }
}

/// A backend that refuses every query; useful to prove a run is fully cached.
#[derive(Debug, Clone, Default)]
pub struct OfflineBackend {
    pub meta: CorpusMeta,
}

impl CountBackend for OfflineBackend {
    fn corpus_meta(&self) -> CorpusMeta {
        self.meta.clone()
    }
    fn count(&self, query: &CountQuery) -> Result<CountResult, CountError> {
        Err(CountError::Offline(query.canonical()))
    }
}
