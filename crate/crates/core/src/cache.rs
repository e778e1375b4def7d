//! Frequent-query response cache.
//!
//! Entries are serialized response bytes keyed by a namespace plus canonical
//! key material. Capacity is bounded with least-recently-used eviction, and
//! concurrent misses on the same key are coalesced so only one caller
//! computes the value.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use base64::Engine as _;
use lru::LruCache;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_CAPACITY: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Namespace {
    Profile,
    Trends,
    Ideas,
    TrendPapers,
    Report,
}

impl Namespace {
    pub fn as_str(self) -> &'static str {
        match self {
            Namespace::Profile => "profile",
            Namespace::Trends => "trends",
            Namespace::Ideas => "ideas",
            Namespace::TrendPapers => "trend_papers",
            Namespace::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub namespace: Namespace,
    pub material: String,
}

impl CacheKey {
    pub fn new(namespace: Namespace, material: impl Into<String>) -> Self {
        Self {
            namespace,
            material: material.into(),
        }
    }

    /// SHA-256 over `namespace NUL material`.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.namespace.as_str().as_bytes());
        h.update([0u8]);
        h.update(self.material.as_bytes());
        h.finalize().into()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

/// Which entries [`ResponseCache::invalidate`] removes. Empty selects all.
#[derive(Debug, Clone, Default)]
pub struct Selector {
    pub namespace: Option<Namespace>,
    pub prefix: Option<String>,
}

impl Selector {
    pub fn namespace(ns: Namespace) -> Self {
        Self {
            namespace: Some(ns),
            prefix: None,
        }
    }

    pub fn prefix(prefix: impl Into<String>) -> Self {
        Self {
            namespace: None,
            prefix: Some(prefix.into()),
        }
    }

    fn matches(&self, key: &CacheKey) -> bool {
        self.namespace.is_none_or(|ns| ns == key.namespace)
            && self.prefix.as_deref().is_none_or(|p| key.material.starts_with(p))
    }
}

/// Result of a computation offered to [`ResponseCache::get_or_compute`].
pub struct Computed {
    pub bytes: Vec<u8>,
    pub cacheable: bool,
}

#[derive(Debug, Clone)]
pub struct Lookup {
    pub bytes: Arc<[u8]>,
    pub hit: bool,
}

/// Keyed by digest; the key is kept for selector matching.
type Entries = LruCache<[u8; 32], (CacheKey, Arc<[u8]>)>;

pub struct ResponseCache {
    entries: Mutex<Entries>,
    flights: Mutex<HashMap<[u8; 32], Arc<Mutex<()>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
}

impl Default for ResponseCache {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl ResponseCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: Mutex::new(LruCache::new(NonZeroUsize::new(capacity.max(1)).unwrap())),
            flights: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
        }
    }

    pub fn get(&self, key: &CacheKey) -> Option<Arc<[u8]>> {
        let found = self
            .entries
            .lock()
            .unwrap()
            .get(&key.digest())
            .map(|(_, v)| Arc::clone(v));
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    /// Stores `value` under `key`, replacing any previous value. Empty
    /// values are not stored and `false` is returned.
    pub fn put(&self, key: CacheKey, value: impl Into<Arc<[u8]>>) -> bool {
        let value = value.into();
        if value.is_empty() {
            return false;
        }
        let digest = key.digest();
        if let Some((old, _)) = self.entries.lock().unwrap().push(digest, (key, value)) {
            if old != digest {
                self.evictions.fetch_add(1, Ordering::Relaxed);
            }
        }
        true
    }

    /// Drops one entry. Returns whether it was present.
    pub fn remove(&self, key: &CacheKey) -> bool {
        self.entries.lock().unwrap().pop(&key.digest()).is_some()
    }

    pub fn invalidate(&self, selector: &Selector) -> usize {
        let mut entries = self.entries.lock().unwrap();
        let doomed: Vec<[u8; 32]> = entries
            .iter()
            .filter(|(_, (key, _))| selector.matches(key))
            .map(|(d, _)| *d)
            .collect();
        for d in &doomed {
            entries.pop(d);
        }
        doomed.len()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
        }
    }

    /// Returns the cached value, or runs `compute` and caches its result.
    /// Concurrent callers missing on the same key wait for the first one
    /// instead of computing again.
    pub fn get_or_compute<E>(
        &self,
        key: &CacheKey,
        compute: impl FnOnce() -> Result<Computed, E>,
    ) -> Result<Lookup, E> {
        if let Some(bytes) = self.get(key) {
            return Ok(Lookup { bytes, hit: true });
        }
        let digest = key.digest();
        let flight = Arc::clone(
            self.flights
                .lock()
                .unwrap()
                .entry(digest)
                .or_insert_with(|| Arc::new(Mutex::new(()))),
        );
        let guard = flight.lock().unwrap_or_else(|e| e.into_inner());
        // Someone may have filled it while we waited.
        let filled = self
            .entries
            .lock()
            .unwrap()
            .get(&digest)
            .map(|(_, v)| Arc::clone(v));
        let result = match filled {
            Some(bytes) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Ok(Lookup { bytes, hit: true })
            }
            None => compute().map(|c| {
                let bytes: Arc<[u8]> = c.bytes.into();
                if c.cacheable {
                    self.put(key.clone(), Arc::clone(&bytes));
                }
                Lookup { bytes, hit: false }
            }),
        };
        drop(guard);
        let mut flights = self.flights.lock().unwrap();
        if Arc::strong_count(&flight) == 2 {
            flights.remove(&digest);
        }
        result
    }

    /// Writes every entry, least recently used first, as JSON lines.
    pub fn save(&self, path: &Path) -> io::Result<()> {
        let entries = self.entries.lock().unwrap();
        let mut out = String::new();
        for (_, (key, value)) in entries.iter().rev() {
            let line = serde_json::to_string(&PersistedEntry {
                key: key.clone(),
                value: base64::engine::general_purpose::STANDARD.encode(value),
            })?;
            out.push_str(&line);
            out.push('\n');
        }
        crate::persist::write_atomic(path, out.as_bytes())
    }

    pub fn load(&self, path: &Path) -> io::Result<usize> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(e),
        };
        let mut n = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let entry: PersistedEntry = serde_json::from_str(line)?;
            let value = base64::engine::general_purpose::STANDARD
                .decode(entry.value)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            self.put(entry.key, value);
            n += 1;
        }
        Ok(n)
    }
}

#[derive(Serialize, Deserialize)]
struct PersistedEntry {
    key: CacheKey,
    value: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;
    use std::sync::atomic::AtomicUsize;
    use std::thread;
    use std::time::Duration;

    fn key(ns: Namespace, m: &str) -> CacheKey {
        CacheKey::new(ns, m)
    }

    #[test]
    fn get_put_and_stats() {
        let cache = ResponseCache::new(8);
        let k = key(Namespace::Profile, "alice");
        assert!(cache.get(&k).is_none());
        assert!(cache.put(k.clone(), b"v1".to_vec()));
        for _ in 0..3 {
            assert_eq!(&*cache.get(&k).unwrap(), b"v1");
        }
        assert_eq!(cache.stats(), CacheStats { hits: 3, misses: 1, evictions: 0 });
        cache.put(k.clone(), b"v2".to_vec());
        assert_eq!(&*cache.get(&k).unwrap(), b"v2");
        assert!(!cache.put(k.clone(), Vec::new()));
    }

    #[test]
    fn namespaces_are_separate() {
        let cache = ResponseCache::new(8);
        cache.put(key(Namespace::Trends, "m"), b"t".to_vec());
        cache.put(key(Namespace::Ideas, "m"), b"i".to_vec());
        assert_eq!(&*cache.get(&key(Namespace::Trends, "m")).unwrap(), b"t");
        assert_eq!(&*cache.get(&key(Namespace::Ideas, "m")).unwrap(), b"i");
        assert_ne!(key(Namespace::Trends, "m").digest(), key(Namespace::Ideas, "m").digest());
    }

    #[test]
    fn lru_evicts_least_recently_used() {
        let cache = ResponseCache::new(3);
        for m in ["a", "b", "c"] {
            cache.put(key(Namespace::Profile, m), m.as_bytes().to_vec());
        }
        cache.get(&key(Namespace::Profile, "a"));
        cache.put(key(Namespace::Profile, "d"), b"d".to_vec());
        assert!(cache.get(&key(Namespace::Profile, "b")).is_none());
        assert!(cache.get(&key(Namespace::Profile, "a")).is_some());
        assert_eq!(cache.stats().evictions, 1);
    }

    #[test]
    fn invalidate_by_namespace_and_prefix() {
        let cache = ResponseCache::new(16);
        assert_eq!(cache.invalidate(&Selector::default()), 0);
        cache.put(key(Namespace::Trends, "h1|all|2024-06-10"), b"x".to_vec());
        cache.put(key(Namespace::Ideas, "h1|2024-06-10|t"), b"x".to_vec());
        cache.put(key(Namespace::Trends, "h2|all|2024-06-10"), b"x".to_vec());
        cache.put(key(Namespace::Profile, "alice"), b"x".to_vec());
        assert_eq!(cache.invalidate(&Selector::prefix("h1|")), 2);
        assert!(cache.get(&key(Namespace::Trends, "h2|all|2024-06-10")).is_some());
        assert_eq!(cache.invalidate(&Selector::namespace(Namespace::Trends)), 1);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn concurrent_misses_compute_once() {
        let cache = Arc::new(ResponseCache::new(16));
        let computed = Arc::new(AtomicUsize::new(0));
        let k = key(Namespace::Trends, "same");
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let (cache, computed, k) = (cache.clone(), computed.clone(), k.clone());
                thread::spawn(move || {
                    cache
                        .get_or_compute(&k, || {
                            computed.fetch_add(1, Ordering::SeqCst);
                            thread::sleep(Duration::from_millis(50));
                            Ok::<_, Infallible>(Computed { bytes: b"bundle".to_vec(), cacheable: true })
                        })
                        .unwrap()
                })
            })
            .collect();
        for h in handles {
            assert_eq!(&*h.join().unwrap().bytes, b"bundle");
        }
        assert_eq!(computed.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn uncacheable_results_are_not_stored() {
        let cache = ResponseCache::new(4);
        let k = key(Namespace::Trends, "empty");
        let r = cache
            .get_or_compute(&k, || Ok::<_, Infallible>(Computed { bytes: b"x".to_vec(), cacheable: false }))
            .unwrap();
        assert!(!r.hit);
        assert!(cache.get(&k).is_none());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(4);
        cache.put(key(Namespace::Profile, "a"), vec![0u8, 255, 7]);
        cache.save(&dir.path().join("cache.jsonl")).unwrap();
        let fresh = ResponseCache::new(4);
        assert_eq!(fresh.load(&dir.path().join("cache.jsonl")).unwrap(), 1);
        assert_eq!(&*fresh.get(&key(Namespace::Profile, "a")).unwrap(), &[0u8, 255, 7]);
    }
}
