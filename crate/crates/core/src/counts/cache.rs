use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::CorpusMeta;
use crate::query_plan::CountQuery;

use super::{Capabilities, CountBackend, CountError, CountResult};

const LOG_FILE: &str = "counts.log";
const COMPACT_MIN_LINES: usize = 64;

/// SHA-256 over the canonical query form, the corpus id and the window.
pub fn cache_key(query: &CountQuery, corpus_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(query.canonical().as_bytes());
    h.update(b"\n");
    h.update(corpus_id.as_bytes());
    h.update(b"\n");
    h.update(query.window_tokens().to_string().as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    /// Canonical query text, kept for inspection only.
    pub query: String,
    pub count: u64,
    pub approx: bool,
    pub fetched_at: u64,
}

/// Append-only on-disk count cache.
///
/// Each line of `counts.log` is one JSON [`CacheEntry`]; later lines win. A
/// torn final line (no trailing newline) is ignored. Any other unreadable
/// line marks the store corrupt, after which it neither serves nor records
/// entries and every query goes to the backend.
#[derive(Debug)]
pub struct CacheStore {
    path: PathBuf,
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<Option<File>>,
    corrupt: AtomicBool,
}

impl CacheStore {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let mut entries = HashMap::new();
        let mut corrupt = false;
        let mut lines = 0usize;
        if path.exists() {
            let raw = fs::read_to_string(&path)?;
            let complete = raw.ends_with('\n');
            let all: Vec<&str> = raw.lines().collect();
            for (i, line) in all.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                lines += 1;
                match serde_json::from_str::<CacheEntry>(line) {
                    Ok(e) => {
                        entries.insert(e.key.clone(), e);
                    }
                    Err(_) if i + 1 == all.len() && !complete => {
                        log::warn!("ignoring torn final line in {}", path.display());
                    }
                    Err(err) => {
                        log::warn!(
                            "count cache {} is corrupt at line {} ({err}); bypassing cache",
                            path.display(),
                            i + 1
                        );
                        corrupt = true;
                        break;
                    }
                }
            }
        }
        let store = CacheStore {
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(None),
            corrupt: AtomicBool::new(corrupt),
        };
        if !corrupt && lines >= COMPACT_MIN_LINES && lines > 2 * store.len() {
            store.compact()?;
        }
        Ok(store)
    }

    pub fn is_corrupt(&self) -> bool {
        self.corrupt.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        if self.is_corrupt() {
            return None;
        }
        self.entries.read().unwrap().get(key).cloned()
    }

    pub fn put(&self, entry: CacheEntry) -> std::io::Result<()> {
        if self.is_corrupt() {
            return Ok(());
        }
        let line = serde_json::to_string(&entry).map_err(std::io::Error::other)?;
        let mut w = self.writer.lock().unwrap();
        if w.is_none() {
            *w = Some(OpenOptions::new().create(true).append(true).open(&self.path)?);
        }
        let f = w.as_mut().expect("writer opened above");
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
        f.flush()?;
        self.entries.write().unwrap().insert(entry.key.clone(), entry);
        Ok(())
    }

    /// Drops every entry and truncates the log. Also clears a corrupt state.
    pub fn clear(&self) -> std::io::Result<()> {
        let mut w = self.writer.lock().unwrap();
        *w = None;
        self.entries.write().unwrap().clear();
        File::create(&self.path)?;
        self.corrupt.store(false, Ordering::Relaxed);
        Ok(())
    }

    /// Rewrites the log with one line per live key, atomically.
    pub fn compact(&self) -> std::io::Result<()> {
        let mut w = self.writer.lock().unwrap();
        let entries = self.entries.read().unwrap();
        let mut sorted: Vec<&CacheEntry> = entries.values().collect();
        sorted.sort_by(|a, b| a.key.cmp(&b.key));
        let tmp = self.path.with_extension("log.tmp");
        {
            let mut f = File::create(&tmp)?;
            for e in sorted {
                let line = serde_json::to_string(e).map_err(std::io::Error::other)?;
                writeln!(f, "{line}")?;
            }
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        *w = None;
        Ok(())
    }

    /// Number of lines currently in the log, for compaction diagnostics.
    pub fn log_lines(&self) -> std::io::Result<usize> {
        if !self.path.exists() {
            return Ok(0);
        }
        Ok(BufReader::new(File::open(&self.path)?).lines().count())
    }
}

/// Caching decorator: hits never reach `inner`; misses are fetched once per
/// key even under concurrency and written through to the store.
pub struct CachedBackend<B> {
    inner: B,
    store: Arc<CacheStore>,
    corpus_id: String,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<B: CountBackend> CachedBackend<B> {
    pub fn new(inner: B, store: Arc<CacheStore>) -> Self {
        let corpus_id = inner.corpus_meta().corpus_id;
        CachedBackend {
            inner,
            store,
            corpus_id,
            key_locks: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn store(&self) -> &CacheStore {
        &self.store
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// `(hits, misses)` since construction.
    pub fn stats(&self) -> (u64, u64) {
        (
            self.hits.load(Ordering::Relaxed),
            self.misses.load(Ordering::Relaxed),
        )
    }

    fn hit(&self, key: &str) -> Option<CountResult> {
        self.store.get(key).map(|e| {
            self.hits.fetch_add(1, Ordering::Relaxed);
            CountResult {
                count: e.count,
                approx: e.approx,
            }
        })
    }
}

impl<B: CountBackend> CountBackend for CachedBackend<B> {
    fn corpus_meta(&self) -> CorpusMeta {
        self.inner.corpus_meta()
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn count(&self, query: &CountQuery) -> Result<CountResult, CountError> {
        let key = cache_key(query, &self.corpus_id);
        if let Some(r) = self.hit(&key) {
            return Ok(r);
        }
        let lock = self
            .key_locks
            .lock()
            .unwrap()
            .entry(key.clone())
            .or_default()
            .clone();
        let guard = lock.lock().unwrap();
        if let Some(r) = self.hit(&key) {
            return Ok(r);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let result = self.inner.count(query)?;
        let fetched_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        if let Err(e) = self.store.put(CacheEntry {
            key: key.clone(),
            query: query.canonical(),
            count: result.count,
            approx: result.approx,
            fetched_at,
        }) {
            log::warn!("failed to write count cache: {e}");
        }
        drop(guard);
        self.key_locks.lock().unwrap().remove(&key);
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct Counting {
        calls: AtomicUsize,
        delay_ms: u64,
    }

    impl Counting {
        fn new(delay_ms: u64) -> Self {
            Counting {
                calls: AtomicUsize::new(0),
                delay_ms,
            }
        }
        fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl CountBackend for &Counting {
        fn corpus_meta(&self) -> CorpusMeta {
            CorpusMeta {
                corpus_id: "stub".into(),
                ..Default::default()
            }
        }
        fn count(&self, q: &CountQuery) -> Result<CountResult, CountError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(self.delay_ms));
            Ok(CountResult {
                count: q.canonical().len() as u64,
                approx: false,
            })
        }
    }

    fn query(lit: &str) -> CountQuery {
        CountQuery::unary(vec![lit.into()], "stub").unwrap()
    }

    #[test]
    fn second_identical_query_is_a_hit() {
        let dir = tempfile::tempdir().unwrap();
        let stub = Counting::new(0);
        let cached = CachedBackend::new(&stub, Arc::new(CacheStore::open(dir.path()).unwrap()));
        let a = cached.count(&query("x")).unwrap();
        let b = cached.count(&query("x")).unwrap();
        assert_eq!(a, b);
        assert_eq!(stub.calls(), 1);
        assert_eq!(cached.stats(), (1, 1));
    }

    #[test]
    fn clear_forces_refetch() {
        let dir = tempfile::tempdir().unwrap();
        let stub = Counting::new(0);
        let cached = CachedBackend::new(&stub, Arc::new(CacheStore::open(dir.path()).unwrap()));
        cached.count(&query("x")).unwrap();
        cached.store().clear().unwrap();
        cached.count(&query("x")).unwrap();
        assert_eq!(stub.calls(), 2);
    }

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let stub = Counting::new(0);
        {
            let cached =
                CachedBackend::new(&stub, Arc::new(CacheStore::open(dir.path()).unwrap()));
            cached.count(&query("x")).unwrap();
        }
        let cached = CachedBackend::new(&stub, Arc::new(CacheStore::open(dir.path()).unwrap()));
        cached.count(&query("x")).unwrap();
        assert_eq!(stub.calls(), 1);
    }

    #[test]
    fn concurrent_identical_queries_fetch_once() {
        let dir = tempfile::tempdir().unwrap();
        let stub = Counting::new(20);
        let cached = CachedBackend::new(&stub, Arc::new(CacheStore::open(dir.path()).unwrap()));
        let results: Vec<CountResult> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..8)
                .map(|_| s.spawn(|| cached.count(&query("same")).unwrap()))
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(results.windows(2).all(|w| w[0] == w[1]));
        assert!((1..=2).contains(&stub.calls()));
    }

    #[test]
    fn corrupt_store_passes_through() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(LOG_FILE), "garbage\n{}\n").unwrap();
        let store = Arc::new(CacheStore::open(dir.path()).unwrap());
        assert!(store.is_corrupt());
        let stub = Counting::new(0);
        let cached = CachedBackend::new(&stub, store);
        let a = cached.count(&query("x")).unwrap();
        let b = cached.count(&query("x")).unwrap();
        assert_eq!(a, b);
        assert_eq!(stub.calls(), 2);
    }

    #[test]
    fn torn_final_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let stub = Counting::new(0);
        {
            let cached =
                CachedBackend::new(&stub, Arc::new(CacheStore::open(dir.path()).unwrap()));
            cached.count(&query("x")).unwrap();
        }
        let mut f = OpenOptions::new()
            .append(true)
            .open(dir.path().join(LOG_FILE))
            .unwrap();
        f.write_all(b"{\"key\":\"abc").unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        assert!(!store.is_corrupt());
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn compaction_keeps_last_write() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        for i in 0..100u64 {
            store
                .put(CacheEntry {
                    key: format!("k{}", i % 3),
                    query: String::new(),
                    count: i,
                    approx: false,
                    fetched_at: 0,
                })
                .unwrap();
        }
        assert_eq!(store.log_lines().unwrap(), 100);
        drop(store);
        let store = CacheStore::open(dir.path()).unwrap();
        assert_eq!(store.log_lines().unwrap(), 3);
        assert_eq!(store.get("k0").unwrap().count, 99);
        assert_eq!(store.get("k1").unwrap().count, 97);
    }

    #[test]
    fn key_depends_on_corpus_and_window() {
        let q1 = CountQuery::new(vec![vec!["a".into()], vec!["b".into()]], 1000, "").unwrap();
        let q2 = CountQuery::new(vec![vec!["a".into()], vec!["b".into()]], 500, "").unwrap();
        assert_ne!(cache_key(&q1, "x"), cache_key(&q1, "y"));
        assert_ne!(cache_key(&q1, "x"), cache_key(&q2, "x"));
        assert_eq!(cache_key(&q1, "x").len(), 64);
    }
}
