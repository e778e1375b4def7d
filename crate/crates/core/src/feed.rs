//! Upstream paper feed: a trait with a live arXiv client and a fixture
//! implementation that reads the corpus line format from local files.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use chrono::NaiveDate;
use thiserror::Error;

use crate::corpus::{canonical_id, PaperRecord};
use crate::text::normalize_name;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeedError {
    #[error("paper feed unreachable: {0}")]
    Unreachable(String),
    #[error("paper feed returned an unusable response: {0}")]
    BadResponse(String),
}

impl FeedError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, FeedError::Unreachable(_))
    }
}

/// A feed entry that either parsed into a record or carries the reason it
/// could not be.
pub type FeedEntry = Result<PaperRecord, String>;

pub trait PaperFeed: Send + Sync {
    /// Papers listed by the feed for one UTC day.
    fn fetch_day(&self, date: NaiveDate) -> Result<Vec<FeedEntry>, FeedError>;

    /// Papers by one author, any order, at most `max` entries.
    fn search_author(&self, name: &str, max: usize) -> Result<Vec<FeedEntry>, FeedError>;
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            base_delay: Duration::ZERO,
        }
    }

    /// Runs `op` until it succeeds, returns a non-retriable error, or the
    /// attempts are used up. The delay doubles after each failure.
    pub fn run<T, E>(
        &self,
        mut op: impl FnMut() -> Result<T, E>,
        retriable: impl Fn(&E) -> bool,
    ) -> Result<T, E> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if attempt < self.attempts.max(1) && retriable(&e) => {
                    tracing::warn!(attempt, "retriable failure, backing off {:?}", delay);
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Reads fixture files in the corpus line format.
///
/// In directory mode every `YYYY-MM-DD.jsonl` file is the listing for that
/// day. In single-file mode the file is the listing for whatever day is
/// asked for. Author search runs over every entry either way.
#[derive(Debug, Default, Clone)]
pub struct FixtureFeed {
    days: BTreeMap<NaiveDate, Vec<FeedEntry>>,
    any_day: Option<Vec<FeedEntry>>,
}

impl FixtureFeed {
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut days = BTreeMap::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            if let Ok(date) = NaiveDate::parse_from_str(stem, "%Y-%m-%d") {
                days.insert(date, parse_lines(&fs::read_to_string(&path)?));
            }
        }
        Ok(Self {
            days,
            any_day: None,
        })
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::single(parse_lines(&fs::read_to_string(path)?)))
    }

    pub fn single(entries: Vec<FeedEntry>) -> Self {
        Self {
            days: BTreeMap::new(),
            any_day: Some(entries),
        }
    }

    pub fn with_day(mut self, date: NaiveDate, entries: Vec<FeedEntry>) -> Self {
        self.days.insert(date, entries);
        self
    }

    /// Listings grouped by the day they were published.
    pub fn from_records(records: impl IntoIterator<Item = PaperRecord>) -> Self {
        let mut days: BTreeMap<NaiveDate, Vec<FeedEntry>> = BTreeMap::new();
        for r in records {
            days.entry(r.published).or_default().push(Ok(r));
        }
        Self {
            days,
            any_day: None,
        }
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.days.keys().copied()
    }

    fn all_entries(&self) -> impl Iterator<Item = &FeedEntry> {
        self.days.values().flatten().chain(self.any_day.iter().flatten())
    }
}

/// Parses corpus-format lines, keeping malformed lines as errors.
pub fn parse_lines(text: &str) -> Vec<FeedEntry> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<PaperRecord>(line)
                .map_err(|e| format!("line {}: {e}", i + 1))
        })
        .collect()
}

impl PaperFeed for FixtureFeed {
    fn fetch_day(&self, date: NaiveDate) -> Result<Vec<FeedEntry>, FeedError> {
        if let Some(all) = &self.any_day {
            return Ok(all.clone());
        }
        Ok(self.days.get(&date).cloned().unwrap_or_default())
    }

    fn search_author(&self, name: &str, max: usize) -> Result<Vec<FeedEntry>, FeedError> {
        let wanted = normalize_name(name);
        let mut seen = HashSet::new();
        Ok(self
            .all_entries()
            .filter_map(|e| e.as_ref().ok())
            .filter(|r| r.authors.iter().any(|a| normalize_name(a) == wanted))
            .filter(|r| seen.insert(r.id.clone()))
            .take(max)
            .cloned()
            .map(Ok)
            .collect())
    }
}

/// Client for the public arXiv export API (Atom responses).
pub struct ArxivFeed {
    client: reqwest::blocking::Client,
    base_url: String,
    categories: Vec<String>,
    max_per_day: usize,
}

impl ArxivFeed {
    pub const DEFAULT_URL: &'static str = "http://export.arxiv.org/api/query";

    pub fn new(categories: Vec<String>) -> Self {
        Self::with_url(Self::DEFAULT_URL, categories)
    }

    pub fn with_url(base_url: &str, categories: Vec<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .user_agent("paper-copilot/0.1")
            .build()
            .expect("http client");
        Self {
            client,
            base_url: base_url.to_string(),
            categories,
            max_per_day: 2000,
        }
    }

    fn query(&self, search: &str, max: usize) -> Result<Vec<FeedEntry>, FeedError> {
        let max_results = max.to_string();
        let body = self
            .client
            .get(&self.base_url)
            .query(&[
                ("search_query", search),
                ("start", "0"),
                ("max_results", max_results.as_str()),
                ("sortBy", "submittedDate"),
                ("sortOrder", "descending"),
            ])
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.text())
            .map_err(|e| FeedError::Unreachable(e.to_string()))?;
        parse_atom(&body)
    }
}

impl PaperFeed for ArxivFeed {
    fn fetch_day(&self, date: NaiveDate) -> Result<Vec<FeedEntry>, FeedError> {
        let day = date.format("%Y%m%d");
        let mut search = format!("submittedDate:[{day}0000 TO {day}2359]");
        if !self.categories.is_empty() {
            let cats: Vec<String> = self.categories.iter().map(|c| format!("cat:{c}")).collect();
            search = format!("{search} AND ({})", cats.join(" OR "));
        }
        self.query(&search, self.max_per_day)
    }

    fn search_author(&self, name: &str, max: usize) -> Result<Vec<FeedEntry>, FeedError> {
        self.query(&format!("au:\"{}\"", name.trim()), max)
    }
}

/// Parses an arXiv Atom response into feed entries.
pub fn parse_atom(xml: &str) -> Result<Vec<FeedEntry>, FeedError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| FeedError::BadResponse(e.to_string()))?;
    let text_of = |node: roxmltree::Node, tag: &str| -> Option<String> {
        node.children()
            .find(|c| c.has_tag_name(tag))
            .and_then(|c| c.text())
            .map(|t| t.split_whitespace().collect::<Vec<_>>().join(" "))
    };
    let entries = doc
        .root_element()
        .children()
        .filter(|n| n.has_tag_name("entry"))
        .map(|entry| {
            let raw_id = text_of(entry, "id").ok_or("entry without id")?;
            let published = text_of(entry, "published").ok_or("entry without published date")?;
            let published = NaiveDate::parse_from_str(published.get(..10).unwrap_or(""), "%Y-%m-%d")
                .map_err(|e| format!("bad published date: {e}"))?;
            let authors = entry
                .children()
                .filter(|c| c.has_tag_name("author"))
                .filter_map(|a| text_of(a, "name"))
                .collect();
            let categories = entry
                .children()
                .filter(|c| c.has_tag_name("category"))
                .filter_map(|c| c.attribute("term").map(str::to_string))
                .collect();
            Ok(PaperRecord {
                id: canonical_id(&raw_id),
                title: text_of(entry, "title").unwrap_or_default(),
                r#abstract: text_of(entry, "summary").unwrap_or_default(),
                authors,
                categories,
                published,
            })
        })
        .collect();
    Ok(entries)
}
