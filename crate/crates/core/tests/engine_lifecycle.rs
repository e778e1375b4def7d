mod common;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{date, feed_dir, Harness, HarnessOptions};
use copilot_core::bench::SyntheticCorpus;
use copilot_core::corpus::TimeRange;
use copilot_core::engine::EngineError;
use copilot_core::feed::{FeedEntry, FeedError, FixtureFeed, PaperFeed};

#[test]
fn readers_see_whole_generations_during_a_large_ingest() {
    let papers = SyntheticCorpus::new(3).papers(1000, date("2024-06-10"), 1);
    let h = Harness::new(
        FixtureFeed::single(papers.into_iter().map(Ok).collect()),
        HarnessOptions::default(),
    );
    let done = AtomicBool::new(false);
    let observed = std::thread::scope(|s| {
        let reader = s.spawn(|| {
            let mut seen = std::collections::BTreeSet::new();
            while !done.load(Ordering::SeqCst) {
                let (corpus_len, pool_len, generation) = h
                    .engine
                    .serve(|v| (v.library.corpus.len(), v.library.papers.len(), v.library.generation))
                    .unwrap();
                assert_eq!(corpus_len, pool_len, "corpus and pool from different generations");
                assert!(corpus_len == 0 || corpus_len == 1000, "partial batch visible: {corpus_len}");
                seen.insert((generation, corpus_len));
            }
            seen
        });
        let summary = h.engine.trigger_daily_update(date("2024-06-10")).recv().unwrap().unwrap();
        assert_eq!(summary.new_papers, 1000);
        assert_eq!(summary.pool_rows_added, 1000);
        done.store(true, Ordering::SeqCst);
        reader.join().unwrap()
    });
    assert!(observed.iter().any(|(_, n)| *n == 0));
    let health = h.engine.health();
    assert_eq!(health.papers, 1000);
    assert_eq!(health.as_of, Some(date("2024-06-10")));
}

struct Flaky {
    inner: FixtureFeed,
    down: AtomicBool,
}

impl PaperFeed for Flaky {
    fn fetch_day(&self, d: chrono::NaiveDate) -> Result<Vec<FeedEntry>, FeedError> {
        if self.down.load(Ordering::SeqCst) {
            return Err(FeedError::Unreachable("503 from upstream".into()));
        }
        self.inner.fetch_day(d)
    }
    fn search_author(&self, name: &str, max: usize) -> Result<Vec<FeedEntry>, FeedError> {
        self.inner.search_author(name, max)
    }
}

#[test]
fn feed_outage_keeps_serving_the_previous_library() {
    let flaky = Arc::new(Flaky {
        inner: feed_dir(),
        down: AtomicBool::new(false),
    });
    struct Shared(Arc<Flaky>);
    impl PaperFeed for Shared {
        fn fetch_day(&self, d: chrono::NaiveDate) -> Result<Vec<FeedEntry>, FeedError> {
            self.0.fetch_day(d)
        }
        fn search_author(&self, name: &str, max: usize) -> Result<Vec<FeedEntry>, FeedError> {
            self.0.search_author(name, max)
        }
    }
    let h = Harness::new(Shared(flaky.clone()), HarnessOptions::default());
    h.ingest(&["2024-06-09"]);
    h.copilot.generate_profile("Alice Smith").unwrap();
    let before = h.engine.health();

    flaky.down.store(true, Ordering::SeqCst);
    let err = h.engine.run_daily_update(date("2024-06-10")).unwrap_err();
    assert!(err.is_retriable(), "{err}");
    let after = h.engine.health();
    assert_eq!(after.library_generation, before.library_generation);
    assert_eq!(after.papers, 5);
    // Requests keep working on the old snapshot.
    let bundle = h.copilot.generate_trends("Alice Smith", TimeRange::All).unwrap().value;
    assert!(!bundle.trending_papers.is_empty());

    flaky.down.store(false, Ordering::SeqCst);
    let summary = h.engine.run_daily_update(date("2024-06-10")).unwrap();
    assert_eq!(summary.new_papers, 3);
    assert_eq!(h.engine.health().papers, 8);
}

#[test]
fn new_papers_invalidate_cached_trends() {
    let h = Harness::new(feed_dir(), HarnessOptions::default());
    h.ingest(&["2024-06-09"]);
    h.copilot.generate_profile("Alice Smith").unwrap();
    let first = h.copilot.generate_trends("Alice Smith", TimeRange::All).unwrap();
    assert!(h.copilot.generate_trends("Alice Smith", TimeRange::All).unwrap().cache_hit);
    h.ingest(&["2024-06-10"]);
    let after = h.copilot.generate_trends("Alice Smith", TimeRange::All).unwrap();
    assert!(!after.cache_hit);
    assert_ne!(after.value.trending_papers, first.value.trending_papers);
    // The profile itself does not depend on the corpus.
    assert!(h.copilot.generate_profile("Alice Smith").unwrap().cache_hit);
}

#[test]
fn state_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let opts = || HarnessOptions {
        data_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let (bundle_ids, exchange) = {
        let h = Harness::new(feed_dir(), opts());
        h.ingest(&["2024-06-09", "2024-06-10"]);
        h.copilot.generate_profile("Alice Smith").unwrap();
        let bundle = h.copilot.generate_trends("Alice Smith", TimeRange::Week).unwrap().value;
        let x = h.copilot.answer_chat("Alice Smith", "what changed this week?").unwrap();
        h.copilot.apply_feedback(&x.id, copilot_core::services::Verdict::DislikePlain).unwrap();
        h.engine.shutdown();
        (bundle.trending_papers.iter().map(|p| p.id.clone()).collect::<Vec<_>>(), x.id)
    };

    let h = Harness::new(feed_dir(), opts());
    let health = h.engine.health();
    assert_eq!(health.papers, 8);
    assert_eq!(health.thoughts, 3);
    assert_eq!(health.as_of, Some(date("2024-06-10")));
    assert!(h.copilot.profile("alice smith").is_some());
    assert!(h.copilot.exchange(&exchange).unwrap().feedback.is_some());
    assert_eq!(h.engine.next_thought_id(copilot_core::thoughtstore::ThoughtKind::Trend), "trend-000004");
    // Same profile, same corpus: same trending papers, now recomputed.
    let again = h.copilot.generate_trends("Alice Smith", TimeRange::Week).unwrap();
    assert!(!again.cache_hit);
    let ids: Vec<String> = again.value.trending_papers.iter().map(|p| p.id.clone()).collect();
    assert_eq!(ids, bundle_ids);
    assert_eq!(h.engine.run_daily_update(date("2024-06-10")).unwrap().new_papers, 0);
}

#[test]
fn stopped_engine_rejects_work() {
    let h = Harness::with_fixture_feed();
    h.engine.shutdown();
    let rx = h.engine.trigger_daily_update(date("2024-06-11"));
    assert!(matches!(rx.recv_timeout(Duration::from_secs(5)).unwrap(), Err(EngineError::Stopped)));
}
