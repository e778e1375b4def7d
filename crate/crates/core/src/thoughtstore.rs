//! Append-only memory of generated trends, ideas and kept answers, kept
//! row-aligned with the thought embedding pool.

use std::collections::HashSet;
use std::io;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, Embedder};
use crate::featurepool::{FeaturePool, PoolEntry, PoolError, PoolSnapshot};
use crate::persist::JsonlLog;

#[derive(Debug, Error)]
pub enum ThoughtError {
    #[error("thought {0:?} already recorded")]
    DuplicateId(String),
    #[error("thought text is empty")]
    EmptyText,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("thought log: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThoughtKind {
    Trend,
    Idea,
    Answer,
}

impl ThoughtKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ThoughtKind::Trend => "trend",
            ThoughtKind::Idea => "idea",
            ThoughtKind::Answer => "answer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thought {
    pub id: String,
    pub kind: ThoughtKind,
    pub text: String,
    pub owner: String,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub source_refs: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ThoughtFilter<'a> {
    pub kind: Option<ThoughtKind>,
    pub owner: Option<&'a str>,
}

impl ThoughtFilter<'_> {
    pub fn kind(kind: ThoughtKind) -> Self {
        Self {
            kind: Some(kind),
            owner: None,
        }
    }

    fn matches(&self, t: &Thought) -> bool {
        self.kind.is_none_or(|k| k == t.kind) && self.owner.is_none_or(|o| o == t.owner)
    }
}

/// A published generation of the store together with its pool.
#[derive(Debug, Clone)]
pub struct ThoughtSnapshot {
    thoughts: Arc<Vec<Arc<Thought>>>,
    pool: PoolSnapshot,
}

impl ThoughtSnapshot {
    pub fn empty(dim: usize) -> Self {
        Self {
            thoughts: Arc::new(Vec::new()),
            pool: PoolSnapshot::empty(dim),
        }
    }

    pub fn len(&self) -> usize {
        self.thoughts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thoughts.is_empty()
    }

    pub fn pool(&self) -> &PoolSnapshot {
        &self.pool
    }

    /// Thoughts in insertion order, optionally filtered.
    pub fn thoughts(&self, filter: ThoughtFilter<'_>) -> Vec<Arc<Thought>> {
        self.thoughts.iter().filter(|t| filter.matches(t)).cloned().collect()
    }

    pub fn count(&self, kind: ThoughtKind) -> usize {
        self.thoughts.iter().filter(|t| t.kind == kind).count()
    }

    pub fn get(&self, id: &str) -> Option<&Arc<Thought>> {
        // Thought lookups are rare (prompt context); a scan is fine.
        self.thoughts.iter().find(|t| t.id == id)
    }
}

/// Single-writer thought store.
pub struct ThoughtStore {
    thoughts: Arc<Vec<Arc<Thought>>>,
    ids: HashSet<String>,
    pool: FeaturePool,
    log: Option<JsonlLog<Thought>>,
}

impl ThoughtStore {
    pub fn in_memory(dim: usize) -> Self {
        Self {
            thoughts: Arc::new(Vec::new()),
            ids: HashSet::new(),
            pool: FeaturePool::new(dim),
            log: None,
        }
    }

    /// Loads `thoughts.jsonl` under `dir` and re-embeds it into a fresh
    /// pool. The embedder is deterministic, so the pool is identical to the
    /// one that was built incrementally.
    pub fn open(dir: &Path, embedder: &dyn Embedder) -> Result<Self, ThoughtError> {
        let log = JsonlLog::new(dir.join("thoughts.jsonl"));
        let mut store = Self::in_memory(embedder.dim());
        for thought in log.load()? {
            store.insert(thought, embedder)?;
        }
        store.log = Some(log);
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.thoughts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thoughts.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    /// Largest numeric suffix among ids shaped like `<kind>-<n>`.
    pub fn max_sequence(&self) -> u64 {
        self.thoughts
            .iter()
            .filter_map(|t| t.id.rsplit_once('-').and_then(|(_, n)| n.parse().ok()))
            .max()
            .unwrap_or(0)
    }

    /// Appends a thought and its embedding. On error nothing changes.
    /// `created_at` is raised to the previous thought's timestamp if it
    /// would go backwards.
    pub fn record(&mut self, mut thought: Thought, embedder: &dyn Embedder) -> Result<ThoughtSnapshot, ThoughtError> {
        if let Some(last) = self.thoughts.last() {
            thought.created_at = thought.created_at.max(last.created_at);
        }
        if self.ids.contains(&thought.id) {
            return Err(ThoughtError::DuplicateId(thought.id));
        }
        if thought.text.trim().is_empty() {
            return Err(ThoughtError::EmptyText);
        }
        let entry = PoolEntry {
            id: thought.id.clone(),
            recency: thought.created_at.timestamp(),
            vector: embedder.embed(&thought.text)?,
        };
        self.pool.validate(std::slice::from_ref(&entry))?;
        if let Some(log) = &self.log {
            log.append(&thought)?;
        }
        self.pool.append(vec![entry])?;
        self.ids.insert(thought.id.clone());
        Arc::make_mut(&mut self.thoughts).push(Arc::new(thought));
        Ok(self.snapshot())
    }

    fn insert(&mut self, thought: Thought, embedder: &dyn Embedder) -> Result<(), ThoughtError> {
        let log = self.log.take();
        let result = self.record(thought, embedder).map(|_| ());
        self.log = log;
        result
    }

    pub fn snapshot(&self) -> ThoughtSnapshot {
        ThoughtSnapshot {
            thoughts: Arc::clone(&self.thoughts),
            pool: self.pool.snapshot(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashedProjectionEmbedder;
    use chrono::TimeZone;

    fn thought(id: &str, kind: ThoughtKind, secs: i64) -> Thought {
        Thought {
            id: id.into(),
            kind,
            text: format!("text of {id}"),
            owner: "alice".into(),
            created_at: Utc.timestamp_opt(secs, 0).unwrap(),
            source_refs: vec![],
        }
    }

    #[test]
    fn record_keeps_store_and_pool_aligned() {
        let e = HashedProjectionEmbedder::new(32, 1);
        let mut store = ThoughtStore::in_memory(32);
        let snap = store.record(thought("answer-1", ThoughtKind::Answer, 10), &e).unwrap();
        assert_eq!(snap.len(), 1);
        assert_eq!(snap.pool().len(), 1);
        store.record(thought("trend-2", ThoughtKind::Trend, 11), &e).unwrap();
        let snap = store.record(thought("idea-3", ThoughtKind::Idea, 12), &e).unwrap();
        for kind in [ThoughtKind::Trend, ThoughtKind::Idea, ThoughtKind::Answer] {
            assert_eq!(snap.thoughts(ThoughtFilter::kind(kind)).len(), 1);
        }
        assert_eq!(snap.thoughts(ThoughtFilter::default()).len(), 3);
        assert_eq!(store.max_sequence(), 3);
    }

    #[test]
    fn duplicates_and_empty_text_rejected() {
        let e = HashedProjectionEmbedder::new(32, 1);
        let mut store = ThoughtStore::in_memory(32);
        store.record(thought("a-1", ThoughtKind::Answer, 1), &e).unwrap();
        assert!(matches!(
            store.record(thought("a-1", ThoughtKind::Idea, 2), &e),
            Err(ThoughtError::DuplicateId(_))
        ));
        let mut empty = thought("a-2", ThoughtKind::Idea, 2);
        empty.text = "  ".into();
        assert!(matches!(store.record(empty, &e), Err(ThoughtError::EmptyText)));
        assert_eq!(store.len(), 1);
        assert_eq!(store.snapshot().pool().len(), 1);
    }

    #[test]
    fn timestamps_never_go_backwards() {
        let e = HashedProjectionEmbedder::new(32, 1);
        let mut store = ThoughtStore::in_memory(32);
        store.record(thought("a-1", ThoughtKind::Answer, 100), &e).unwrap();
        let snap = store.record(thought("a-2", ThoughtKind::Answer, 50), &e).unwrap();
        let all = snap.thoughts(ThoughtFilter::default());
        assert!(all[1].created_at >= all[0].created_at);
    }

    #[test]
    fn reopen_rebuilds_identical_pool() {
        let dir = tempfile::tempdir().unwrap();
        let e = HashedProjectionEmbedder::new(32, 1);
        let mut store = ThoughtStore::open(dir.path(), &e).unwrap();
        for i in 0..4 {
            store.record(thought(&format!("idea-{i}"), ThoughtKind::Idea, i), &e).unwrap();
        }
        let before = store.snapshot();
        let reopened = ThoughtStore::open(dir.path(), &e).unwrap().snapshot();
        assert_eq!(reopened.len(), 4);
        assert_eq!(reopened.pool().to_matrix(), before.pool().to_matrix());
    }
}
