mod common;

use std::collections::BTreeSet;

use common::{date, feed_dir, fixtures, load_records};
use copilot_core::corpus::{search_by_author, Corpus, CorpusError, TimeRange};
use copilot_core::feed::{FeedEntry, FeedError, FixtureFeed, PaperFeed, RetryPolicy};

fn ids_of(papers: &[std::sync::Arc<copilot_core::corpus::PaperRecord>]) -> BTreeSet<String> {
    papers.iter().map(|p| p.id.clone()).collect()
}

#[test]
fn daily_union_over_fixture_days() {
    let feed = feed_dir();
    let mut corpus = Corpus::in_memory();
    let first = corpus.ingest_daily(&feed, date("2024-06-09")).unwrap();
    assert_eq!((first.len(), corpus.len()), (5, 5));

    let again = corpus.ingest_daily(&feed, date("2024-06-09")).unwrap();
    assert_eq!((again.len(), corpus.len()), (0, 5));

    // Oracle: plain set union of the raw ids with version suffixes removed.
    let raw: BTreeSet<String> = ["2024-06-09", "2024-06-10"]
        .iter()
        .flat_map(|d| load_records(&format!("feed/{d}.jsonl")))
        .map(|r| r.id.split('v').next().unwrap().to_string())
        .collect();
    let second = corpus.ingest_daily(&feed, date("2024-06-10")).unwrap();
    assert_eq!(second.len(), 3);
    assert_eq!(corpus.len(), 8);
    assert_eq!(ids_of(corpus.snapshot().papers()), raw);
}

#[test]
fn reingest_leaves_files_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let feed = feed_dir();
    let mut corpus = Corpus::open(dir.path()).unwrap();
    corpus.ingest_daily(&feed, date("2024-06-09")).unwrap();
    corpus.ingest_daily(&feed, date("2024-06-10")).unwrap();
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
    let (log, manifest) = (read("corpus.jsonl"), read("corpus.manifest.json"));
    corpus.ingest_daily(&feed, date("2024-06-10")).unwrap();
    assert_eq!(read("corpus.jsonl"), log);
    assert_eq!(read("corpus.manifest.json"), manifest);

    let reopened = Corpus::open(dir.path()).unwrap();
    assert_eq!(reopened.snapshot().papers(), corpus.snapshot().papers());
    assert_eq!(reopened.as_of(), Some(date("2024-06-10")));
}

#[test]
fn stale_date_is_rejected() {
    let feed = feed_dir();
    let mut corpus = Corpus::in_memory();
    corpus.ingest_daily(&feed, date("2024-06-10")).unwrap();
    assert!(matches!(
        corpus.ingest_daily(&feed, date("2024-06-09")),
        Err(CorpusError::StaleDate { .. })
    ));
}

#[test]
fn malformed_entries_are_skipped() {
    let feed = FixtureFeed::from_file(&fixtures().join("malformed.jsonl")).unwrap();
    let corpus = Corpus::in_memory();
    let batch = corpus.fetch_new(&feed, date("2024-06-10")).unwrap();
    assert_eq!(batch.new.len(), 1);
    assert_eq!(batch.malformed, 2);
}

#[test]
fn range_views_match_linear_scan() {
    let records = load_records("range10.jsonl");
    let feed = FixtureFeed::from_records(records.clone());
    let mut corpus2 = Corpus::in_memory();
    for d in feed.dates().collect::<Vec<_>>() {
        corpus2.ingest_daily(&feed, d).unwrap();
    }
    let snap = corpus2.snapshot();
    let now = date("2024-06-10");
    assert_eq!(snap.select_range(TimeRange::All, now).len(), 10);

    let scan = |lo: &str, hi: &str| -> BTreeSet<String> {
        records
            .iter()
            .filter(|r| r.published >= date(lo) && r.published <= date(hi))
            .map(|r| r.id.clone())
            .collect()
    };
    let day = snap.select_range(TimeRange::Day, now);
    assert_eq!(day.len(), 2);
    assert_eq!(ids_of(day.papers()), scan("2024-06-10", "2024-06-10"));
    let week = snap.select_range(TimeRange::Week, now);
    assert_eq!(ids_of(week.papers()), scan("2024-06-04", "2024-06-10"));
}

#[test]
fn author_search_newest_first() {
    let papers = search_by_author("Alice Smith", &feed_dir(), RetryPolicy::immediate(1), 50).unwrap();
    // Oracle: filter both feed files by author, dedup on canonical id.
    let mut expected: Vec<(String, String)> = ["2024-06-09", "2024-06-10"]
        .iter()
        .flat_map(|d| load_records(&format!("feed/{d}.jsonl")))
        .filter(|r| r.authors.iter().any(|a| a.split_whitespace().collect::<Vec<_>>().join(" ").eq_ignore_ascii_case("alice smith")))
        .map(|r| (r.published.to_string(), r.id.split('v').next().unwrap().to_string()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    expected.dedup_by(|a, b| a.1 == b.1);
    assert_eq!(papers.len(), 4);
    assert_eq!(expected.len(), 4);
    assert!(papers.windows(2).all(|w| w[0].published >= w[1].published));

    assert!(search_by_author("Nobody Here", &feed_dir(), RetryPolicy::immediate(1), 50)
        .unwrap()
        .is_empty());
    assert!(matches!(
        search_by_author("  ", &feed_dir(), RetryPolicy::immediate(1), 50),
        Err(CorpusError::EmptyName)
    ));
}

struct Down;

impl PaperFeed for Down {
    fn fetch_day(&self, _: chrono::NaiveDate) -> Result<Vec<FeedEntry>, FeedError> {
        Err(FeedError::Unreachable("connection refused".into()))
    }
    fn search_author(&self, _: &str, _: usize) -> Result<Vec<FeedEntry>, FeedError> {
        Err(FeedError::Unreachable("connection refused".into()))
    }
}

#[test]
fn unreachable_feed_keeps_previous_snapshot() {
    let mut corpus = Corpus::in_memory().with_retry(RetryPolicy::immediate(3));
    corpus.ingest_daily(&feed_dir(), date("2024-06-09")).unwrap();
    let before = corpus.snapshot();
    let err = corpus.ingest_daily(&Down, date("2024-06-10")).unwrap_err();
    assert!(matches!(err, CorpusError::Feed(ref e) if e.is_retriable()));
    assert_eq!(corpus.snapshot().papers(), before.papers());
    assert_eq!(corpus.as_of(), Some(date("2024-06-09")));
}
