//! Benchmarks: retrieval scaling with and without pre-computed pools, and
//! a scripted user session with the deployment optimizations toggled.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{Duration as Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::ResponseCache;
use crate::clock::{Clock, ManualClock};
use crate::corpus::{PaperRecord, TimeRange};
use crate::embed::{CountingEmbedder, Embedder, HashedProjectionEmbedder, DEFAULT_DIM, DEFAULT_SEED};
use crate::engine::{Engine, EngineConfig};
use crate::featurepool::{FeaturePool, PoolEntry};
use crate::feed::FixtureFeed;
use crate::llm::{GatewayConfig, LlmGateway, MockProvider};
use crate::retrieval::{retrieve_naive, retrieve_topk, Candidate, Source, DEFAULT_K};
use crate::services::{Copilot, CopilotConfig, ServiceError, Toggles, Verdict};

/// `(before - after) / before`, in percent.
pub fn reduction_pct(before: f64, after: f64) -> f64 {
    (before - after) / before * 100.0
}

/// Median of a sample (mean of the two middle values for even sizes).
pub fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    match s.len() {
        0 => 0.0,
        n if n % 2 == 1 => s[n / 2],
        n => (s[n / 2 - 1] + s[n / 2]) / 2.0,
    }
}

/// Nearest-rank 95th percentile.
pub fn p95(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    if s.is_empty() {
        return 0.0;
    }
    let rank = (0.95 * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

/// Seeded generator of paper-like records with realistic text lengths.
pub struct SyntheticCorpus {
    rng: ChaCha8Rng,
    vocab: Vec<String>,
    authors: Vec<String>,
}

const SYLLABLES: &[&str] = &[
    "ra", "ne", "to", "mi", "ka", "lu", "se", "vo", "di", "pa", "qu", "ber", "tion", "al", "ex", "gra", "phi", "mo",
    "den", "sor", "lin", "ear", "net", "work", "trans", "form", "er", "atten", "graph", "model", "learn", "ing",
];

const FIRST: &[&str] = &[
    "Ada", "Alan", "Grace", "Edsger", "Barbara", "Donald", "Frances", "John", "Leslie", "Radia", "Tim", "Shafi",
    "Yann", "Fei", "Judea", "Geoffrey", "Yoshua", "Daphne", "Michael", "Sanjeev",
];
const LAST: &[&str] = &[
    "Lovelace", "Turing", "Hopper", "Dijkstra", "Liskov", "Knuth", "Allen", "McCarthy", "Lamport", "Perlman",
    "Berners", "Goldwasser", "LeCun", "Li", "Pearl", "Hinton", "Bengio", "Koller", "Jordan", "Arora",
];

impl SyntheticCorpus {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vocab: Vec<String> = (0..3000)
            .map(|_| {
                let n = rng.gen_range(2..=4);
                (0..n).map(|_| *SYLLABLES.choose(&mut rng).unwrap()).collect()
            })
            .collect();
        vocab.sort();
        vocab.dedup();
        let authors = FIRST
            .iter()
            .flat_map(|f| LAST.iter().map(move |l| format!("{f} {l}")))
            .collect();
        Self { rng, vocab, authors }
    }

    /// Zipf-like word draw so some words are common and most are rare.
    fn word(&mut self) -> &str {
        let n = self.vocab.len() as f64;
        let u: f64 = self.rng.gen();
        let idx = (n.powf(u) - 1.0) as usize;
        &self.vocab[idx.min(self.vocab.len() - 1)]
    }

    pub fn text(&mut self, words: usize) -> String {
        let mut out = String::with_capacity(words * 8);
        for i in 0..words {
            if i > 0 {
                out.push(' ');
            }
            let w = self.word().to_string();
            out.push_str(&w);
        }
        out
    }

    /// `n` papers spread evenly over `days` days ending at `last_day`.
    pub fn papers(&mut self, n: usize, last_day: NaiveDate, days: u32) -> Vec<PaperRecord> {
        let days = days.max(1) as usize;
        (0..n)
            .map(|i| {
                let title_len = self.rng.gen_range(6..=12);
                let abstract_len = self.rng.gen_range(120..=180);
                let n_authors = self.rng.gen_range(1..=4);
                let authors = (0..n_authors)
                    .map(|_| self.authors.choose(&mut self.rng).unwrap().clone())
                    .collect();
                PaperRecord {
                    id: format!("2406.{i:05}"),
                    title: self.text(title_len),
                    r#abstract: self.text(abstract_len),
                    authors,
                    categories: vec!["cs.LG".into()],
                    published: last_day - Days::days((days - 1 - i % days) as i64),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: String,
    pub corpus_size: usize,
    pub trials: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub embed_calls_per_query: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: String,
    pub corpus_sizes: Vec<usize>,
    pub toggles: Option<Toggles>,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, mode: &str, size: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.mode == mode && r.corpus_size == size)
    }

    /// Medians of one mode, in corpus-size order.
    pub fn medians(&self, mode: &str) -> Vec<f64> {
        self.corpus_sizes
            .iter()
            .filter_map(|&s| self.row(mode, s).map(|r| r.median_ms))
            .collect()
    }

    pub const CSV_HEADER: &'static str = "scenario,mode,corpus_size,trials,median_ms,p95_ms,embed_calls_per_query";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4},{:.4},{}",
                self.scenario, r.mode, r.corpus_size, r.trials, r.median_ms, r.p95_ms, r.embed_calls_per_query
            );
        }
        out
    }
}

pub const MODE_PRECOMPUTED: &str = "precomputed";
pub const MODE_NAIVE: &str = "naive";

#[derive(Debug, Clone)]
pub struct ScalingParams {
    pub sizes: Vec<usize>,
    /// Queries timed per size in pre-computed mode.
    pub trials: usize,
    /// Queries timed per size in naive mode, which is far slower.
    pub naive_trials: usize,
    pub query_words: usize,
    pub dim: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for ScalingParams {
    fn default() -> Self {
        Self {
            sizes: vec![1000, 2000, 4000, 8000],
            trials: 25,
            naive_trials: 2,
            query_words: 300,
            dim: DEFAULT_DIM,
            k: DEFAULT_K,
            seed: 7,
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Times trend-style retrieval (a profile-length query against the whole
/// corpus) at each corpus size, with the pool pre-computed and with every
/// abstract re-embedded per query.
///
/// Sizes are prefixes of one synthetic corpus, and trials visit the sizes
/// round-robin so that machine-wide slowdowns spread over all sizes alike.
pub fn bench_retrieval_scaling(params: &ScalingParams) -> BenchReport {
    let mut sizes = params.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let largest = sizes.last().copied().unwrap_or(0);
    let embedder = CountingEmbedder::new(HashedProjectionEmbedder::new(params.dim, DEFAULT_SEED));
    let last_day = NaiveDate::from_ymd_opt(2024, 6, 10).expect("date");
    let mut gen = SyntheticCorpus::new(params.seed);
    let papers = gen.papers(largest, last_day, 30);
    let queries: Vec<String> = (0..params.trials.max(params.naive_trials) + 1)
        .map(|_| gen.text(params.query_words))
        .collect();

    // One append per size: each snapshot is the previous one plus a tail.
    let mut pool = FeaturePool::new(params.dim);
    let mut snapshots = Vec::with_capacity(sizes.len());
    for &size in &sizes {
        let tail = papers[pool.len()..size]
            .iter()
            .map(|p| PoolEntry {
                id: p.id.clone(),
                recency: p.recency(),
                vector: embedder.embed(&p.r#abstract).expect("synthetic abstracts embed"),
            })
            .collect();
        pool.append(tail).expect("fresh ids");
        snapshots.push(pool.snapshot());
    }
    let candidates: Vec<Candidate> = papers
        .iter()
        .map(|p| Candidate {
            source: Source::Papers,
            id: &p.id,
            recency: p.recency(),
            text: &p.r#abstract,
        })
        .collect();

    let precomputed = |q: &str, i: usize| {
        let v = embedder.embed(q).expect("query embeds");
        std::hint::black_box(retrieve_topk(&v, &[(Source::Papers, &snapshots[i])], params.k, None).expect("retrieval"));
    };
    let naive = |q: &str, i: usize| {
        std::hint::black_box(retrieve_naive(&embedder, q, &candidates[..sizes[i]], params.k).expect("retrieval"));
    };
    let measure = |trials: usize, warm: bool, f: &dyn Fn(&str, usize)| -> Vec<(Vec<f64>, u64)> {
        let mut out = vec![(Vec::with_capacity(trials), 0u64); sizes.len()];
        if warm {
            for i in 0..sizes.len() {
                f(&queries[0], i);
            }
        }
        for q in &queries[1..=trials] {
            for (i, slot) in out.iter_mut().enumerate() {
                embedder.reset();
                let t = Instant::now();
                f(q, i);
                slot.0.push(ms(t.elapsed()));
                slot.1 += embedder.calls();
            }
        }
        out
    };

    let mut rows = Vec::new();
    for (mode, trials, warm, f) in [
        (MODE_PRECOMPUTED, params.trials, true, &precomputed as &dyn Fn(&str, usize)),
        (MODE_NAIVE, params.naive_trials, false, &naive),
    ] {
        for (i, (samples, calls)) in measure(trials, warm, f).into_iter().enumerate() {
            rows.push(BenchRow {
                mode: mode.to_string(),
                corpus_size: sizes[i],
                trials,
                median_ms: median(&samples),
                p95_ms: p95(&samples),
                embed_calls_per_query: calls as f64 / trials.max(1) as f64,
            });
        }
    }
    rows.sort_by(|a, b| a.corpus_size.cmp(&b.corpus_size).then_with(|| b.mode.cmp(&a.mode)));
    BenchReport {
        scenario: "retrieval_scaling".into(),
        corpus_sizes: sizes,
        toggles: None,
        rows,
    }
}

#[derive(Debug, Clone)]
pub struct DeployParams {
    pub toggles: Toggles,
    /// Nominal provider latency per completion.
    pub provider_latency: Duration,
    /// Nominal storage latency per thought append.
    pub write_latency: Duration,
    /// Every simulated delay is multiplied by this, so a session with
    /// multi-second nominal latencies can run in a test.
    pub time_scale: f64,
    pub corpus_size: usize,
    /// Times the profile, trends and chat script is replayed.
    pub rounds: usize,
    pub questions: Vec<String>,
    pub user: String,
    pub seed: u64,
}

impl Default for DeployParams {
    fn default() -> Self {
        Self {
            toggles: Toggles::ALL_ON,
            provider_latency: Duration::from_secs(5),
            write_latency: Duration::from_millis(200),
            time_scale: 1.0,
            corpus_size: 300,
            rounds: 5,
            questions: vec![
                "What are the latest results on graph attention networks?".into(),
                "Which transformer variants scale best to long inputs?".into(),
                "How do retrieval augmented models use external memory?".into(),
            ],
            user: "Ada Lovelace".into(),
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestTiming {
    pub round: usize,
    pub step: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentReport {
    pub toggles: Toggles,
    pub time_scale: f64,
    pub total_seconds: f64,
    /// Total divided by the time scale: the session length at nominal
    /// latencies (compute time is inflated by the same factor).
    pub nominal_total_seconds: f64,
    pub provider_calls: u64,
    pub requests: Vec<RequestTiming>,
}

impl DeploymentReport {
    pub const CSV_HEADER: &'static str = "toggles,round,step,seconds";

    pub fn to_csv(&self) -> String {
        let t = self.toggles;
        let label = format!(
            "precompute={}|cache={}|parallel_engine={}",
            t.precompute, t.cache, t.parallel_engine
        );
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.requests {
            let _ = writeln!(out, "{label},{},{},{:.6}", r.round, r.step, r.seconds);
        }
        let _ = writeln!(out, "{label},all,total,{:.6}", self.total_seconds);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentComparison {
    pub before: DeploymentReport,
    pub after: DeploymentReport,
    pub reduction_pct: f64,
}

/// Replays the scripted session once with the given toggles.
pub fn bench_deployment(params: &DeployParams) -> Result<DeploymentReport, ServiceError> {
    let scale = |d: Duration| d.mul_f64(params.time_scale);
    let today = NaiveDate::from_ymd_opt(2024, 6, 10).expect("date");
    let mut gen = SyntheticCorpus::new(params.seed);
    let mut papers = gen.papers(params.corpus_size, today, 14);
    for p in papers.iter_mut().step_by(25) {
        p.authors.insert(0, params.user.clone());
    }
    let feed = FixtureFeed::from_records(papers);
    let dates: Vec<NaiveDate> = feed.dates().collect();
    let clock: Arc<dyn Clock> = Arc::new(ManualClock::at_date(today));
    let cache = Arc::new(ResponseCache::default());
    let engine = Engine::start(
        EngineConfig {
            simulated_write_latency: scale(params.write_latency),
            ..Default::default()
        },
        Arc::new(HashedProjectionEmbedder::default()),
        Arc::new(feed),
        Some(cache.clone()),
        clock.clone(),
    )?;
    for d in dates {
        engine.run_daily_update(d)?;
    }
    let provider = Arc::new(MockProvider::with_latency(scale(params.provider_latency)));
    let gateway = Arc::new(LlmGateway::new(provider.clone(), GatewayConfig::default()));
    let copilot = Copilot::new(
        engine.clone(),
        gateway,
        cache,
        clock,
        CopilotConfig {
            toggles: params.toggles,
            ..Default::default()
        },
    )?;

    let mut requests = Vec::new();
    let mut timed = |round: usize, step: &str, f: &mut dyn FnMut() -> Result<(), ServiceError>| {
        let t = Instant::now();
        let r = f();
        requests.push(RequestTiming {
            round,
            step: step.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        r
    };
    let started = Instant::now();
    for round in 0..params.rounds {
        timed(round, "profile", &mut || copilot.generate_profile(&params.user).map(|_| ()))?;
        timed(round, "trends", &mut || {
            copilot.generate_trends(&params.user, TimeRange::All).map(|_| ())
        })?;
        for q in &params.questions {
            let mut exchange = None;
            timed(round, "chat", &mut || {
                exchange = Some(copilot.answer_chat(&params.user, q)?);
                Ok(())
            })?;
            let id = exchange.expect("chat succeeded").id;
            timed(round, "feedback", &mut || {
                copilot.apply_feedback(&id, Verdict::DislikePlain).map(|_| ())
            })?;
        }
    }
    let total_seconds = started.elapsed().as_secs_f64();
    engine.shutdown();
    Ok(DeploymentReport {
        toggles: params.toggles,
        time_scale: params.time_scale,
        total_seconds,
        nominal_total_seconds: total_seconds / params.time_scale,
        provider_calls: provider.calls(),
        requests,
    })
}

/// All-off session against the given toggles, same script otherwise.
pub fn compare_deployment(params: &DeployParams) -> Result<DeploymentComparison, ServiceError> {
    let before = bench_deployment(&DeployParams {
        toggles: Toggles::ALL_OFF,
        ..params.clone()
    })?;
    let after = bench_deployment(params)?;
    Ok(DeploymentComparison {
        reduction_pct: reduction_pct(before.total_seconds, after.total_seconds),
        before,
        after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
        let s: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(p95(&s), 19.0);
        assert_eq!(p95(&[5.0]), 5.0);
    }

    #[test]
    fn reduction_matches_reference_arithmetic() {
        assert!((reduction_pct(87.1, 26.2) - 69.92).abs() < 0.01);
        assert!((87.1f64 - 26.2 - 60.9).abs() < 1e-9);
    }

    #[test]
    fn synthetic_corpus_is_seeded() {
        let day = NaiveDate::from_ymd_opt(2024, 6, 10).unwrap();
        let a = SyntheticCorpus::new(3).papers(20, day, 7);
        let b = SyntheticCorpus::new(3).papers(20, day, 7);
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.published <= day && p.published > day - Days::days(7)));
        let words = a[0].r#abstract.split(' ').count();
        assert!((120..=180).contains(&words));
    }

    #[test]
    fn empty_corpus_scaling_does_not_crash() {
        let report = bench_retrieval_scaling(&ScalingParams {
            sizes: vec![0],
            trials: 2,
            naive_trials: 2,
            query_words: 20,
            dim: 32,
            ..Default::default()
        });
        for mode in [MODE_PRECOMPUTED, MODE_NAIVE] {
            let row = report.row(mode, 0).unwrap();
            assert_eq!(row.embed_calls_per_query, 1.0);
            assert!(row.median_ms < 50.0);
        }
        assert!(report.to_csv().starts_with(BenchReport::CSV_HEADER));
    }
}
