//! The paper database: daily union ingestion, time-range views and author
//! lookup.

use std::collections::{HashMap, HashSet};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feed::{FeedError, PaperFeed, RetryPolicy};
use crate::persist::{write_atomic, JsonlLog};
use crate::text::normalize_name;

/// Most publications fetched when building a profile from an author name.
pub const AUTHOR_SEARCH_CAP: usize = 50;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot ingest {requested}: corpus is already at {as_of}")]
    StaleDate { requested: NaiveDate, as_of: NaiveDate },
    #[error("author name is empty")]
    EmptyName,
    #[error(transparent)]
    Feed(#[from] FeedError),
    #[error("corpus storage: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub r#abstract: String,
    pub authors: Vec<String>,
    #[serde(default)]
    pub categories: Vec<String>,
    pub published: NaiveDate,
}

impl PaperRecord {
    /// Unix seconds at midnight UTC of the publication date.
    pub fn recency(&self) -> i64 {
        self.published
            .and_hms_opt(0, 0, 0)
            .expect("midnight")
            .and_utc()
            .timestamp()
    }

    fn check(&self, ingest_date: NaiveDate) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.title.trim().is_empty() {
            return Err(format!("{}: empty title", self.id));
        }
        if self.r#abstract.trim().is_empty() {
            return Err(format!("{}: empty abstract", self.id));
        }
        if self.published > ingest_date {
            return Err(format!(
                "{}: published {} is after ingestion date {ingest_date}",
                self.id, self.published
            ));
        }
        Ok(())
    }
}

/// Strips an `arxiv.org/abs/` prefix and a trailing `vN` revision suffix.
pub fn canonical_id(raw: &str) -> String {
    let raw = raw.trim();
    let raw = raw.rsplit_once("/abs/").map_or(raw, |(_, tail)| tail);
    match raw.rfind('v') {
        Some(pos)
            if pos > 0
                && pos + 1 < raw.len()
                && raw[pos + 1..].bytes().all(|b| b.is_ascii_digit())
                && raw[..pos].ends_with(|c: char| c.is_ascii_digit()) =>
        {
            raw[..pos].to_string()
        }
        _ => raw.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeRange {
    Day,
    Week,
    All,
}

impl TimeRange {
    /// Inclusive date window, or `None` for the whole corpus.
    pub fn window(self, now: NaiveDate) -> Option<(NaiveDate, NaiveDate)> {
        match self {
            TimeRange::Day => Some((now, now)),
            TimeRange::Week => Some((now - Duration::days(6), now)),
            TimeRange::All => None,
        }
    }

    pub fn contains(self, published: NaiveDate, now: NaiveDate) -> bool {
        self.window(now)
            .is_none_or(|(start, end)| start <= published && published <= end)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TimeRange::Day => "day",
            TimeRange::Week => "week",
            TimeRange::All => "all",
        }
    }
}

impl std::str::FromStr for TimeRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "day" => Ok(TimeRange::Day),
            "week" => Ok(TimeRange::Week),
            "all" => Ok(TimeRange::All),
            other => Err(format!("unknown time range {other:?} (expected day, week or all)")),
        }
    }
}

/// Immutable, ordered (published, then id) view of the corpus.
#[derive(Debug, Clone, Default)]
pub struct CorpusSnapshot {
    papers: Arc<Vec<Arc<PaperRecord>>>,
    index: Arc<HashMap<String, usize>>,
    as_of: Option<NaiveDate>,
}

impl CorpusSnapshot {
    fn from_sorted(papers: Vec<Arc<PaperRecord>>, as_of: Option<NaiveDate>) -> Self {
        let index = papers
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.clone(), i))
            .collect();
        Self {
            papers: Arc::new(papers),
            index: Arc::new(index),
            as_of,
        }
    }

    pub fn as_of(&self) -> Option<NaiveDate> {
        self.as_of
    }

    pub fn len(&self) -> usize {
        self.papers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.papers.is_empty()
    }

    pub fn papers(&self) -> &[Arc<PaperRecord>] {
        &self.papers
    }

    pub fn get(&self, id: &str) -> Option<&Arc<PaperRecord>> {
        self.index.get(id).map(|&i| &self.papers[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.papers.iter().map(|p| p.id.as_str())
    }

    /// Records whose publication date falls in the window, order preserved.
    pub fn select_range(&self, range: TimeRange, now: NaiveDate) -> CorpusSnapshot {
        if range == TimeRange::All {
            return self.clone();
        }
        let papers = self
            .papers
            .iter()
            .filter(|p| range.contains(p.published, now))
            .cloned()
            .collect();
        CorpusSnapshot::from_sorted(papers, self.as_of)
    }
}

/// Outcome of fetching one day from the feed, before anything is committed.
#[derive(Debug, Default, Clone)]
pub struct IngestBatch {
    pub date: NaiveDate,
    pub new: Vec<PaperRecord>,
    pub duplicates: usize,
    pub malformed: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Manifest {
    as_of: Option<NaiveDate>,
    records: usize,
}

/// Corpus files: `corpus.jsonl` (one record per line, append-only) and
/// `corpus.manifest.json` (the `as_of` date and record count).
#[derive(Debug)]
pub struct CorpusStore {
    log: JsonlLog<PaperRecord>,
    manifest: PathBuf,
}

impl CorpusStore {
    pub fn new(dir: &Path) -> Self {
        Self {
            log: JsonlLog::new(dir.join("corpus.jsonl")),
            manifest: dir.join("corpus.manifest.json"),
        }
    }

    pub fn log_path(&self) -> &Path {
        self.log.path()
    }

    /// Records in the order they were ingested.
    pub fn load_records(&self) -> io::Result<Vec<PaperRecord>> {
        self.log.load()
    }

    fn load(&self) -> io::Result<(Vec<PaperRecord>, Option<NaiveDate>)> {
        let records = self.log.load()?;
        let as_of = match std::fs::read(&self.manifest) {
            Ok(bytes) => serde_json::from_slice::<Manifest>(&bytes)?.as_of,
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(e),
        };
        Ok((records, as_of))
    }

    fn append(&self, records: &[PaperRecord], as_of: Option<NaiveDate>, total: usize) -> io::Result<()> {
        self.log.append_all(records)?;
        let manifest = serde_json::to_vec_pretty(&Manifest {
            as_of,
            records: total,
        })?;
        write_atomic(&self.manifest, &manifest)
    }
}

/// Single-writer handle on the corpus.
#[derive(Debug)]
pub struct Corpus {
    snapshot: CorpusSnapshot,
    ids: HashSet<String>,
    store: Option<CorpusStore>,
    retry: RetryPolicy,
}

impl Corpus {
    pub fn in_memory() -> Self {
        Self {
            snapshot: CorpusSnapshot::default(),
            ids: HashSet::new(),
            store: None,
            retry: RetryPolicy::default(),
        }
    }

    /// Opens (or creates) the corpus files under `dir`.
    pub fn open(dir: &Path) -> Result<Self, CorpusError> {
        let store = CorpusStore::new(dir);
        let (records, as_of) = store.load()?;
        let mut corpus = Self::in_memory();
        corpus.store = Some(store);
        corpus.install(records, as_of);
        Ok(corpus)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn retry(&self) -> RetryPolicy {
        self.retry
    }

    fn install(&mut self, records: Vec<PaperRecord>, as_of: Option<NaiveDate>) {
        let mut all: Vec<Arc<PaperRecord>> = self.snapshot.papers.iter().cloned().collect();
        for r in records {
            if self.ids.insert(r.id.clone()) {
                all.push(Arc::new(r));
            }
        }
        all.sort_by(|a, b| a.published.cmp(&b.published).then_with(|| a.id.cmp(&b.id)));
        self.snapshot = CorpusSnapshot::from_sorted(all, as_of);
    }

    pub fn snapshot(&self) -> CorpusSnapshot {
        self.snapshot.clone()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn as_of(&self) -> Option<NaiveDate> {
        self.snapshot.as_of
    }

    /// Fetches one day and filters it down to new, well-formed records.
    /// Nothing is modified.
    pub fn fetch_new(&self, feed: &dyn PaperFeed, date: NaiveDate) -> Result<IngestBatch, CorpusError> {
        if let Some(as_of) = self.snapshot.as_of {
            if date < as_of {
                return Err(CorpusError::StaleDate {
                    requested: date,
                    as_of,
                });
            }
        }
        let entries = self.retry.run(|| feed.fetch_day(date), FeedError::is_retriable)?;
        let mut batch = IngestBatch {
            date,
            ..Default::default()
        };
        let mut seen = HashSet::new();
        for entry in entries {
            let record = match entry {
                Ok(mut r) => {
                    r.id = canonical_id(&r.id);
                    match r.check(date) {
                        Ok(()) => r,
                        Err(reason) => {
                            tracing::warn!(%reason, "skipping malformed feed entry");
                            batch.malformed += 1;
                            continue;
                        }
                    }
                }
                Err(reason) => {
                    tracing::warn!(%reason, "skipping malformed feed entry");
                    batch.malformed += 1;
                    continue;
                }
            };
            if self.ids.contains(&record.id) || !seen.insert(record.id.clone()) {
                batch.duplicates += 1;
                continue;
            }
            batch.new.push(record);
        }
        Ok(batch)
    }

    /// Appends a fetched batch and advances `as_of`. The caller must not
    /// have committed any other batch since `fetch_new`.
    pub fn commit(&mut self, batch: IngestBatch) -> Result<CorpusSnapshot, CorpusError> {
        let as_of = Some(self.snapshot.as_of.map_or(batch.date, |d| d.max(batch.date)));
        let unchanged = batch.new.is_empty() && as_of == self.snapshot.as_of;
        if !unchanged {
            if let Some(store) = &self.store {
                store.append(&batch.new, as_of, self.ids.len() + batch.new.len())?;
            }
            self.install(batch.new, as_of);
        }
        Ok(self.snapshot())
    }

    /// Daily union update. Returns the records that were new.
    pub fn ingest_daily(
        &mut self,
        feed: &dyn PaperFeed,
        date: NaiveDate,
    ) -> Result<Vec<PaperRecord>, CorpusError> {
        let batch = self.fetch_new(feed, date)?;
        let new = batch.new.clone();
        self.commit(batch)?;
        Ok(new)
    }
}

/// An author's publications from the feed, newest first, capped at `cap`.
/// Zero matches is an empty list.
pub fn search_by_author(
    name: &str,
    feed: &dyn PaperFeed,
    retry: RetryPolicy,
    cap: usize,
) -> Result<Vec<PaperRecord>, CorpusError> {
    let normalized = normalize_name(name);
    if normalized.is_empty() {
        return Err(CorpusError::EmptyName);
    }
    let entries = retry.run(|| feed.search_author(&normalized, cap), FeedError::is_retriable)?;
    let mut seen = HashSet::new();
    let mut papers: Vec<PaperRecord> = entries
        .into_iter()
        .filter_map(|e| e.map_err(|reason| tracing::warn!(%reason, "skipping malformed author entry")).ok())
        .map(|mut r| {
            r.id = canonical_id(&r.id);
            r
        })
        .filter(|r| seen.insert(r.id.clone()))
        .collect();
    papers.sort_by(|a, b| b.published.cmp(&a.published).then_with(|| a.id.cmp(&b.id)));
    papers.truncate(cap);
    Ok(papers)
}
