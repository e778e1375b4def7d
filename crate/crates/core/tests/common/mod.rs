#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use chrono::NaiveDate;
use copilot_core::cache::ResponseCache;
use copilot_core::clock::{Clock, ManualClock};
use copilot_core::corpus::PaperRecord;
use copilot_core::embed::{CountingEmbedder, Embedder, HashedProjectionEmbedder};
use copilot_core::engine::{Engine, EngineConfig};
use copilot_core::feed::{FixtureFeed, PaperFeed};
use copilot_core::llm::{GatewayConfig, LlmGateway, MockProvider};
use copilot_core::services::{Copilot, CopilotConfig, Toggles};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn date(s: &str) -> NaiveDate {
    s.parse().expect("fixture date")
}

pub fn feed_dir() -> FixtureFeed {
    FixtureFeed::from_dir(&fixtures().join("feed")).expect("fixture feed")
}

pub fn load_records(name: &str) -> Vec<PaperRecord> {
    std::fs::read_to_string(fixtures().join(name))
        .expect("fixture file")
        .lines()
        .map(|l| serde_json::from_str(l).expect("fixture record"))
        .collect()
}

pub struct Harness {
    pub clock: Arc<ManualClock>,
    pub mock: Arc<MockProvider>,
    pub embedder: Arc<CountingEmbedder<HashedProjectionEmbedder>>,
    pub engine: Arc<Engine>,
    pub cache: Arc<ResponseCache>,
    pub copilot: Arc<Copilot>,
}

pub struct HarnessOptions {
    pub toggles: Toggles,
    pub today: NaiveDate,
    pub engine: EngineConfig,
    pub data_dir: Option<PathBuf>,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            toggles: Toggles::ALL_ON,
            today: date("2024-06-10"),
            engine: EngineConfig::default(),
            data_dir: None,
        }
    }
}

impl Harness {
    pub fn new(feed: impl PaperFeed + 'static, opts: HarnessOptions) -> Self {
        let clock = Arc::new(ManualClock::at_date(opts.today));
        let mock = Arc::new(MockProvider::new());
        let embedder = Arc::new(CountingEmbedder::new(HashedProjectionEmbedder::default()));
        let cache = Arc::new(ResponseCache::default());
        let engine = Engine::start(
            EngineConfig {
                data_dir: opts.data_dir.clone(),
                ..opts.engine
            },
            embedder.clone() as Arc<dyn Embedder>,
            Arc::new(feed),
            Some(cache.clone()),
            clock.clone() as Arc<dyn Clock>,
        )
        .expect("engine starts");
        let gateway = Arc::new(LlmGateway::new(mock.clone(), GatewayConfig::default()));
        let copilot = Arc::new(
            Copilot::new(
                engine.clone(),
                gateway,
                cache.clone(),
                clock.clone(),
                CopilotConfig {
                    toggles: opts.toggles,
                    outbox: opts.data_dir.as_ref().map(|d| d.join("outbox")),
                    data_dir: opts.data_dir,
                    ..Default::default()
                },
            )
            .expect("copilot"),
        );
        Self {
            clock,
            mock,
            embedder,
            engine,
            cache,
            copilot,
        }
    }

    /// Fixture feed days 2024-06-09 and 2024-06-10, ingested.
    pub fn with_fixture_feed() -> Self {
        let h = Self::new(feed_dir(), HarnessOptions::default());
        h.ingest(&["2024-06-09", "2024-06-10"]);
        h
    }

    pub fn ingest(&self, days: &[&str]) {
        for d in days {
            self.engine.run_daily_update(date(d)).expect("daily update");
        }
    }

    pub fn thoughts(&self) -> usize {
        self.engine.flush();
        self.engine.view().memory.len()
    }
}
