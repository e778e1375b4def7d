//! Serving runtime with a daily-update worker and a self-evolution worker.
//!
//! Readers take `Arc` snapshots out of two [`ArcSwap`] cells: the library
//! (corpus plus paper pool, always published together) and the thought
//! memory (thought store plus thought pool). Writers build the next
//! generation off to the side and swap it in, so request handlers never
//! wait on ingestion or on thought appends.

use std::collections::VecDeque;
use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use arc_swap::ArcSwap;
use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{Namespace, ResponseCache, Selector};
use crate::clock::Clock;
use crate::corpus::{Corpus, CorpusError, CorpusSnapshot, CorpusStore, PaperRecord};
use crate::embed::{embed_batch, EmbedError, Embedder};
use crate::featurepool::{FeaturePool, PoolEntry, PoolError, PoolFile, PoolSnapshot};
use crate::feed::{PaperFeed, RetryPolicy};
use crate::persist::JsonlLog;
use crate::thoughtstore::{Thought, ThoughtError, ThoughtKind, ThoughtSnapshot, ThoughtStore};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("service overloaded; retry later")]
    Overloaded,
    #[error("self-evolution queue is full ({0} tasks)")]
    QueueFull(usize),
    #[error("engine is stopped")]
    Stopped,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Thought(#[from] ThoughtError),
    #[error("engine storage: {0}")]
    Io(#[from] io::Error),
}

impl EngineError {
    pub fn is_retriable(&self) -> bool {
        match self {
            EngineError::Overloaded | EngineError::QueueFull(_) => true,
            EngineError::Corpus(CorpusError::Feed(e)) => e.is_retriable(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkerRole {
    Service,
    DailyUpdate,
    SelfEvolution,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub data_dir: Option<PathBuf>,
    pub service_concurrency: usize,
    pub overload_deadline: Duration,
    pub evolution_queue_capacity: usize,
    /// Nice value applied to the background workers (Linux only).
    pub background_nice: i32,
    /// Fire the daily update at this UTC time each day.
    pub daily_update_utc_time: Option<NaiveTime>,
    /// Extra delay before each thought append; stands in for slow storage.
    pub simulated_write_latency: Duration,
    pub retry: RetryPolicy,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            service_concurrency: 64,
            overload_deadline: Duration::from_secs(30),
            evolution_queue_capacity: 10_000,
            background_nice: 10,
            daily_update_utc_time: None,
            simulated_write_latency: Duration::ZERO,
            retry: RetryPolicy::default(),
        }
    }
}

/// Corpus and paper pool of one generation.
#[derive(Debug, Clone)]
pub struct Library {
    pub corpus: CorpusSnapshot,
    pub papers: PoolSnapshot,
    pub generation: u64,
}

/// What a request handler gets: snapshots, nothing mutable.
#[derive(Debug, Clone)]
pub struct ServeView {
    pub library: Arc<Library>,
    pub memory: Arc<ThoughtSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateSummary {
    pub date: NaiveDate,
    pub new_papers: usize,
    pub pool_rows_added: usize,
    pub duplicates: usize,
    pub malformed: usize,
    pub generation: u64,
    #[serde(with = "duration_secs")]
    pub duration: Duration,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTask {
    pub thought: Thought,
    pub enqueue_time: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub library_generation: u64,
    pub papers: usize,
    pub thoughts: usize,
    pub queue_depth: usize,
    pub last_publish: Option<DateTime<Utc>>,
    pub as_of: Option<NaiveDate>,
}

struct LibraryWriter {
    corpus: Corpus,
    pool: FeaturePool,
    pool_file: Option<PoolFile>,
}

#[derive(Default)]
struct QueueState {
    tasks: VecDeque<EvolutionTask>,
    in_progress: bool,
    paused: bool,
    stopping: bool,
    halted: bool,
}

struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

impl Gate {
    fn acquire(&self, deadline: Duration) -> Option<Permit<'_>> {
        let start = Instant::now();
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            let left = deadline.checked_sub(start.elapsed())?;
            let (guard, timeout) = self.cv.wait_timeout(free, left).unwrap();
            free = guard;
            if timeout.timed_out() && *free == 0 {
                return None;
            }
        }
        *free -= 1;
        Some(Permit(self))
    }
}

struct Shared {
    config: EngineConfig,
    embedder: Arc<dyn Embedder>,
    feed: Arc<dyn PaperFeed>,
    cache: Option<Arc<ResponseCache>>,
    clock: Arc<dyn Clock>,
    library: ArcSwap<Library>,
    memory: ArcSwap<ThoughtSnapshot>,
    writer: Mutex<LibraryWriter>,
    thoughts: Mutex<ThoughtStore>,
    queue: Mutex<QueueState>,
    queue_cv: Condvar,
    journal: Option<JsonlLog<EvolutionTask>>,
    gate: Gate,
    thought_seq: AtomicU64,
    last_publish: Mutex<Option<DateTime<Utc>>>,
}

enum UpdateCommand {
    Run {
        date: NaiveDate,
        reply: Sender<Result<UpdateSummary, EngineError>>,
    },
    Stop,
}

pub struct Engine {
    shared: Arc<Shared>,
    update_tx: Mutex<Option<Sender<UpdateCommand>>>,
    scheduler_stop: Mutex<Option<Sender<()>>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl Engine {
    /// Opens storage (if a data directory is configured), replays any
    /// journaled evolution tasks, publishes the first snapshots and starts
    /// the workers.
    pub fn start(
        config: EngineConfig,
        embedder: Arc<dyn Embedder>,
        feed: Arc<dyn PaperFeed>,
        cache: Option<Arc<ResponseCache>>,
        clock: Arc<dyn Clock>,
    ) -> Result<Arc<Engine>, EngineError> {
        let dim = embedder.dim();
        let (corpus, pool, pool_file, store, journal) = match &config.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let corpus = Corpus::open(dir)?.with_retry(config.retry);
                let pool_file = PoolFile::new(dir, "papers");
                let mut pool = pool_file.load(dim)?;
                let aligned = pool.len() == corpus.len()
                    && corpus.snapshot().ids().all(|id| pool.contains(id));
                if !aligned {
                    tracing::warn!(
                        corpus = corpus.len(),
                        pool = pool.len(),
                        "paper pool out of step with corpus; rebuilding"
                    );
                    let records = CorpusStore::new(dir).load_records()?;
                    pool = build_paper_pool(records.iter(), embedder.as_ref())?;
                    pool_file.write_full(&pool.snapshot())?;
                }
                let mut store = ThoughtStore::open(dir, embedder.as_ref())?;
                let journal = JsonlLog::<EvolutionTask>::new(dir.join("evolution.journal"));
                let mut replayed = 0;
                for task in journal.load()? {
                    if !store.contains(&task.thought.id) {
                        store.record(task.thought, embedder.as_ref())?;
                        replayed += 1;
                    }
                }
                if replayed > 0 {
                    tracing::info!(replayed, "replayed journaled thoughts");
                }
                journal.truncate()?;
                (corpus, pool, Some(pool_file), store, Some(journal))
            }
            None => (
                Corpus::in_memory().with_retry(config.retry),
                FeaturePool::new(dim),
                None,
                ThoughtStore::in_memory(dim),
                None,
            ),
        };

        let library = Library {
            corpus: corpus.snapshot(),
            papers: pool.snapshot(),
            generation: 0,
        };
        let memory = store.snapshot();
        let shared = Arc::new(Shared {
            gate: Gate {
                free: Mutex::new(config.service_concurrency.max(1)),
                cv: Condvar::new(),
            },
            thought_seq: AtomicU64::new(store.max_sequence()),
            config,
            embedder,
            feed,
            cache,
            clock,
            library: ArcSwap::from_pointee(library),
            memory: ArcSwap::from_pointee(memory),
            writer: Mutex::new(LibraryWriter {
                corpus,
                pool,
                pool_file,
            }),
            thoughts: Mutex::new(store),
            queue: Mutex::new(QueueState::default()),
            queue_cv: Condvar::new(),
            journal,
            last_publish: Mutex::new(None),
        });

        let engine = Arc::new(Engine {
            shared: Arc::clone(&shared),
            update_tx: Mutex::new(None),
            scheduler_stop: Mutex::new(None),
            workers: Mutex::new(Vec::new()),
        });
        engine.spawn_workers();
        Ok(engine)
    }

    fn spawn_workers(&self) {
        let mut workers = self.workers.lock().unwrap();
        let nice = self.shared.config.background_nice;

        let (tx, rx) = mpsc::channel::<UpdateCommand>();
        let shared = Arc::clone(&self.shared);
        workers.push(
            thread::Builder::new()
                .name("daily-update".into())
                .spawn(move || {
                    lower_priority(nice);
                    while let Ok(UpdateCommand::Run { date, reply }) = rx.recv() {
                        let _ = reply.send(shared.daily_update(date));
                    }
                })
                .expect("spawn daily-update worker"),
        );

        if let Some(at) = self.shared.config.daily_update_utc_time {
            let (stop_tx, stop_rx) = mpsc::channel::<()>();
            let tx = tx.clone();
            let clock = Arc::clone(&self.shared.clock);
            workers.push(
                thread::Builder::new()
                    .name("update-scheduler".into())
                    .spawn(move || run_scheduler(at, clock, tx, stop_rx))
                    .expect("spawn scheduler"),
            );
            *self.scheduler_stop.lock().unwrap() = Some(stop_tx);
        }
        *self.update_tx.lock().unwrap() = Some(tx);

        let shared = Arc::clone(&self.shared);
        workers.push(
            thread::Builder::new()
                .name("self-evolution".into())
                .spawn(move || {
                    lower_priority(nice);
                    shared.evolution_loop();
                })
                .expect("spawn self-evolution worker"),
        );
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.shared.embedder
    }

    pub fn feed(&self) -> &Arc<dyn PaperFeed> {
        &self.shared.feed
    }

    pub fn config(&self) -> &EngineConfig {
        &self.shared.config
    }

    /// Current snapshots, without taking a service permit.
    pub fn view(&self) -> ServeView {
        ServeView {
            library: self.shared.library.load_full(),
            memory: self.shared.memory.load_full(),
        }
    }

    /// Runs a request handler against the snapshots current at its start.
    /// Waits for a free slot up to the overload deadline.
    pub fn serve<R>(&self, handler: impl FnOnce(&ServeView) -> R) -> Result<R, EngineError> {
        let _permit = self
            .shared
            .gate
            .acquire(self.shared.config.overload_deadline)
            .ok_or(EngineError::Overloaded)?;
        let view = self.view();
        Ok(handler(&view))
    }

    /// Ingests one day on the calling thread and publishes the result.
    pub fn run_daily_update(&self, date: NaiveDate) -> Result<UpdateSummary, EngineError> {
        self.shared.daily_update(date)
    }

    /// Hands a daily update to the background worker.
    pub fn trigger_daily_update(&self, date: NaiveDate) -> Receiver<Result<UpdateSummary, EngineError>> {
        let (reply, rx) = mpsc::channel();
        let sent = self
            .update_tx
            .lock()
            .unwrap()
            .as_ref()
            .map(|tx| tx.send(UpdateCommand::Run { date, reply: reply.clone() }).is_ok())
            .unwrap_or(false);
        if !sent {
            let _ = reply.send(Err(EngineError::Stopped));
        }
        rx
    }

    /// Re-embeds the whole corpus into a fresh paper pool, rewrites the pool
    /// file and publishes it.
    pub fn rebuild_paper_pool(&self) -> Result<usize, EngineError> {
        let shared = &self.shared;
        let mut writer = shared.writer.lock().unwrap();
        let records = match &shared.config.data_dir {
            Some(dir) => CorpusStore::new(dir).load_records()?,
            None => writer.corpus.snapshot().papers().iter().map(|p| (**p).clone()).collect(),
        };
        let pool = build_paper_pool(records.iter(), shared.embedder.as_ref())?;
        if let Some(file) = &writer.pool_file {
            file.write_full(&pool.snapshot())?;
        }
        writer.pool = pool;
        let rows = writer.pool.len();
        shared.publish_library(&writer);
        Ok(rows)
    }

    pub fn next_thought_id(&self, kind: ThoughtKind) -> String {
        let n = self.shared.thought_seq.fetch_add(1, Ordering::SeqCst) + 1;
        format!("{}-{n:06}", kind.as_str())
    }

    /// Queues a thought for the self-evolution worker and returns at once.
    pub fn enqueue_thought(&self, thought: Thought) -> Result<(), EngineError> {
        let shared = &self.shared;
        let task = EvolutionTask {
            thought,
            enqueue_time: shared.clock.now(),
        };
        let mut q = shared.queue.lock().unwrap();
        if q.stopping {
            return Err(EngineError::Stopped);
        }
        let cap = shared.config.evolution_queue_capacity;
        if q.tasks.len() >= cap {
            return Err(EngineError::QueueFull(cap));
        }
        if let Some(journal) = &shared.journal {
            journal.append(&task)?;
        }
        q.tasks.push_back(task);
        shared.queue_cv.notify_all();
        Ok(())
    }

    /// Records a thought on the calling thread.
    pub fn record_thought_now(&self, thought: Thought) -> Result<(), EngineError> {
        self.shared.record(thought)
    }

    pub fn queue_depth(&self) -> usize {
        let q = self.shared.queue.lock().unwrap();
        q.tasks.len() + usize::from(q.in_progress)
    }

    /// Blocks until every queued thought has been recorded.
    pub fn flush(&self) {
        let mut q = self.shared.queue.lock().unwrap();
        while (!q.tasks.is_empty() && !q.paused && !q.halted) || q.in_progress {
            q = self.shared.queue_cv.wait(q).unwrap();
        }
    }

    pub fn pause_evolution(&self) {
        self.shared.queue.lock().unwrap().paused = true;
    }

    pub fn resume_evolution(&self) {
        self.shared.queue.lock().unwrap().paused = false;
        self.shared.queue_cv.notify_all();
    }

    pub fn health(&self) -> Health {
        let view = self.view();
        Health {
            library_generation: view.library.generation,
            papers: view.library.corpus.len(),
            thoughts: view.memory.len(),
            queue_depth: self.queue_depth(),
            last_publish: *self.shared.last_publish.lock().unwrap(),
            as_of: view.library.corpus.as_of(),
        }
    }

    /// Drains the evolution queue and stops every worker.
    pub fn shutdown(&self) {
        self.stop(false);
    }

    /// Stops the workers immediately, leaving queued tasks in the journal.
    /// Models a crash for recovery tests.
    pub fn halt(&self) {
        self.stop(true);
    }

    fn stop(&self, halt: bool) {
        {
            let mut q = self.shared.queue.lock().unwrap();
            q.stopping = true;
            q.halted |= halt;
            if !halt {
                q.paused = false;
            }
            self.shared.queue_cv.notify_all();
        }
        if let Some(tx) = self.update_tx.lock().unwrap().take() {
            let _ = tx.send(UpdateCommand::Stop);
        }
        drop(self.scheduler_stop.lock().unwrap().take());
        let workers: Vec<_> = self.workers.lock().unwrap().drain(..).collect();
        for w in workers {
            let _ = w.join();
        }
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.stop(false);
    }
}

impl Shared {
    fn publish_library(&self, writer: &LibraryWriter) {
        let generation = self.library.load().generation + 1;
        self.library.store(Arc::new(Library {
            corpus: writer.corpus.snapshot(),
            papers: writer.pool.snapshot(),
            generation,
        }));
        *self.last_publish.lock().unwrap() = Some(self.clock.now());
    }

    fn daily_update(&self, date: NaiveDate) -> Result<UpdateSummary, EngineError> {
        let started = Instant::now();
        let mut writer = self.writer.lock().unwrap();
        let result = (|| {
            let batch = writer.corpus.fetch_new(self.feed.as_ref(), date)?;
            let abstracts: Vec<&str> = batch.new.iter().map(|p| p.r#abstract.as_str()).collect();
            let vectors = embed_batch(self.embedder.as_ref(), &abstracts)?;
            let entries: Vec<PoolEntry> = batch
                .new
                .iter()
                .zip(vectors)
                .map(|(p, vector)| PoolEntry {
                    id: p.id.clone(),
                    recency: p.recency(),
                    vector,
                })
                .collect();
            writer.pool.validate(&entries)?;
            let (new_papers, duplicates, malformed) = (batch.new.len(), batch.duplicates, batch.malformed);
            writer.corpus.commit(batch)?;
            if let Some(file) = &writer.pool_file {
                file.append(writer.pool.dim(), &entries)?;
            }
            let rows = entries.len();
            writer.pool.append(entries)?;
            Ok::<_, EngineError>((new_papers, rows, duplicates, malformed))
        })();
        let (new_papers, pool_rows_added, duplicates, malformed) = match result {
            Ok(v) => v,
            Err(e) => {
                tracing::error!(%date, error = %e, "daily update failed; keeping previous snapshot");
                return Err(e);
            }
        };
        self.publish_library(&writer);
        let generation = self.library.load().generation;
        drop(writer);
        if new_papers > 0 {
            if let Some(cache) = &self.cache {
                for ns in [Namespace::Trends, Namespace::Ideas, Namespace::TrendPapers, Namespace::Report] {
                    cache.invalidate(&Selector::namespace(ns));
                }
            }
        }
        let summary = UpdateSummary {
            date,
            new_papers,
            pool_rows_added,
            duplicates,
            malformed,
            generation,
            duration: started.elapsed(),
        };
        tracing::info!(?summary, "daily update published");
        Ok(summary)
    }

    fn record(&self, thought: Thought) -> Result<(), EngineError> {
        if !self.config.simulated_write_latency.is_zero() {
            thread::sleep(self.config.simulated_write_latency);
        }
        let mut store = self.thoughts.lock().unwrap();
        let snapshot = store.record(thought, self.embedder.as_ref())?;
        self.memory.store(Arc::new(snapshot));
        Ok(())
    }

    fn evolution_loop(&self) {
        loop {
            let task = {
                let mut q = self.queue.lock().unwrap();
                loop {
                    if q.halted || (q.stopping && q.tasks.is_empty()) {
                        return;
                    }
                    if !q.paused || q.stopping {
                        if let Some(task) = q.tasks.pop_front() {
                            q.in_progress = true;
                            break task;
                        }
                    }
                    q = self.queue_cv.wait(q).unwrap();
                }
            };
            if let Err(e) = self.record(task.thought) {
                tracing::warn!(error = %e, "dropping evolution task");
            }
            let mut q = self.queue.lock().unwrap();
            q.in_progress = false;
            if q.tasks.is_empty() && !q.halted {
                if let Some(journal) = &self.journal {
                    if let Err(e) = journal.truncate() {
                        tracing::warn!(error = %e, "could not truncate evolution journal");
                    }
                }
            }
            self.queue_cv.notify_all();
        }
    }
}

/// Embeds records (abstracts) into a new pool in the given order.
pub fn build_paper_pool<'a>(
    records: impl Iterator<Item = &'a PaperRecord>,
    embedder: &dyn Embedder,
) -> Result<FeaturePool, EngineError> {
    let records: Vec<&PaperRecord> = records.collect();
    let abstracts: Vec<&str> = records.iter().map(|p| p.r#abstract.as_str()).collect();
    let vectors = embed_batch(embedder, &abstracts)?;
    let mut pool = FeaturePool::new(embedder.dim());
    pool.append(
        records
            .iter()
            .zip(vectors)
            .map(|(p, vector)| PoolEntry {
                id: p.id.clone(),
                recency: p.recency(),
                vector,
            })
            .collect(),
    )?;
    Ok(pool)
}

fn run_scheduler(at: NaiveTime, clock: Arc<dyn Clock>, tx: Sender<UpdateCommand>, stop: Receiver<()>) {
    loop {
        let now = clock.now();
        let mut next = now.date_naive().and_time(at).and_utc();
        if next <= now {
            next += chrono::Duration::days(1);
        }
        let wait = (next - now).to_std().unwrap_or(Duration::from_secs(1));
        match stop.recv_timeout(wait) {
            Err(RecvTimeoutError::Timeout) => {
                let (reply, rx) = mpsc::channel();
                let date = clock.today();
                if tx.send(UpdateCommand::Run { date, reply }).is_err() {
                    return;
                }
                if let Ok(Err(e)) = rx.recv() { tracing::error!(%date, error = %e, "scheduled update failed") }
            }
            _ => return,
        }
    }
}

#[cfg(target_os = "linux")]
fn lower_priority(nice: i32) {
    if nice == 0 {
        return;
    }
    // SAFETY: plain syscalls on the current thread id; no memory is shared.
    unsafe {
        let tid = libc::syscall(libc::SYS_gettid) as libc::id_t;
        if libc::setpriority(libc::PRIO_PROCESS, tid, nice) != 0 {
            tracing::debug!("could not lower background worker priority");
        }
    }
}

#[cfg(not(target_os = "linux"))]
fn lower_priority(_nice: i32) {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::embed::HashedProjectionEmbedder;
    use crate::feed::FixtureFeed;
    use std::sync::atomic::AtomicBool;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn paper(id: &str, day: &str) -> PaperRecord {
        PaperRecord {
            id: id.into(),
            title: format!("Title {id}"),
            r#abstract: format!("An abstract about topic {id} and methods"),
            authors: vec!["Alice Smith".into()],
            categories: vec![],
            published: date(day),
        }
    }

    fn thought(id: &str, n: i64) -> Thought {
        Thought {
            id: id.into(),
            kind: ThoughtKind::Answer,
            text: format!("answer text {id}"),
            owner: "alice".into(),
            created_at: DateTime::from_timestamp(n, 0).unwrap(),
            source_refs: vec![],
        }
    }

    fn engine_with(feed: FixtureFeed, config: EngineConfig, embedder: Arc<dyn Embedder>) -> Arc<Engine> {
        Engine::start(
            config,
            embedder,
            Arc::new(feed),
            None,
            Arc::new(ManualClock::at_date(date("2024-06-10"))),
        )
        .unwrap()
    }

    fn small_embedder() -> Arc<dyn Embedder> {
        Arc::new(HashedProjectionEmbedder::new(32, 9))
    }

    #[test]
    fn daily_update_summary_counts() {
        let feed = FixtureFeed::from_records((0..3).map(|i| paper(&format!("p{i}"), "2024-06-10")));
        let engine = engine_with(feed, EngineConfig::default(), small_embedder());
        let summary = engine.run_daily_update(date("2024-06-10")).unwrap();
        assert_eq!((summary.new_papers, summary.pool_rows_added), (3, 3));
        assert!(summary.duration > Duration::ZERO);
        let view = engine.view();
        assert_eq!(view.library.corpus.len(), 3);
        assert_eq!(view.library.papers.len(), 3);
    }

    struct FailAfter {
        inner: HashedProjectionEmbedder,
        armed: AtomicBool,
    }

    impl Embedder for FailAfter {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn embed(&self, text: &str) -> Result<crate::embed::EmbeddingVector, EmbedError> {
            if self.armed.load(Ordering::SeqCst) {
                return Err(EmbedError::Backend("injected".into()));
            }
            self.inner.embed(text)
        }
    }

    #[test]
    fn failed_embed_publishes_nothing() {
        let feed = FixtureFeed::from_records(vec![paper("a", "2024-06-09"), paper("b", "2024-06-10")]);
        let embedder = Arc::new(FailAfter {
            inner: HashedProjectionEmbedder::new(32, 9),
            armed: AtomicBool::new(false),
        });
        let dir = tempfile::tempdir().unwrap();
        let config = EngineConfig {
            data_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let engine = engine_with(feed, config, embedder.clone());
        engine.run_daily_update(date("2024-06-09")).unwrap();
        let before = engine.view();
        embedder.armed.store(true, Ordering::SeqCst);
        assert!(matches!(engine.run_daily_update(date("2024-06-10")), Err(EngineError::Embed(_))));
        let after = engine.view();
        assert_eq!(after.library.generation, before.library.generation);
        assert_eq!(after.library.corpus.len(), 1);
        assert_eq!(after.library.papers.len(), 1);
        embedder.armed.store(false, Ordering::SeqCst);
        assert_eq!(engine.run_daily_update(date("2024-06-10")).unwrap().new_papers, 1);
    }

    #[test]
    fn background_update_publishes_atomically() {
        let feed = FixtureFeed::from_records((0..50).map(|i| paper(&format!("p{i}"), "2024-06-10")));
        let engine = engine_with(feed, EngineConfig::default(), small_embedder());
        let pending = engine.trigger_daily_update(date("2024-06-10"));
        loop {
            let view = engine.view();
            assert_eq!(view.library.corpus.len(), view.library.papers.len());
            if let Ok(result) = pending.try_recv() {
                assert_eq!(result.unwrap().new_papers, 50);
                break;
            }
            thread::yield_now();
        }
        assert_eq!(engine.view().library.papers.len(), 50);
    }

    #[test]
    fn queue_is_fifo_and_flushes() {
        let engine = engine_with(FixtureFeed::default(), EngineConfig::default(), small_embedder());
        for i in 0..5 {
            engine.enqueue_thought(thought(&format!("answer-{i}"), i)).unwrap();
        }
        engine.flush();
        let ids: Vec<_> = engine
            .view()
            .memory
            .thoughts(Default::default())
            .iter()
            .map(|t| t.id.clone())
            .collect();
        assert_eq!(ids, (0..5).map(|i| format!("answer-{i}")).collect::<Vec<_>>());
        assert_eq!(engine.view().memory.pool().len(), 5);
    }

    #[test]
    fn full_queue_pushes_back() {
        let config = EngineConfig {
            evolution_queue_capacity: 2,
            ..Default::default()
        };
        let engine = engine_with(FixtureFeed::default(), config, small_embedder());
        engine.pause_evolution();
        engine.enqueue_thought(thought("a-1", 1)).unwrap();
        engine.enqueue_thought(thought("a-2", 2)).unwrap();
        assert!(matches!(engine.enqueue_thought(thought("a-3", 3)), Err(EngineError::QueueFull(2))));
        engine.resume_evolution();
        engine.flush();
        assert_eq!(engine.view().memory.len(), 2);
    }

    #[test]
    fn journal_replays_exactly_once_after_crash() {
        let dir = tempfile::tempdir().unwrap();
        let config = EngineConfig {
            data_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let engine = engine_with(FixtureFeed::default(), config.clone(), small_embedder());
        engine.enqueue_thought(thought("answer-000001", 1)).unwrap();
        engine.flush();
        engine.pause_evolution();
        engine.enqueue_thought(thought("answer-000002", 2)).unwrap();
        engine.enqueue_thought(thought("answer-000003", 3)).unwrap();
        engine.halt();
        assert_eq!(engine.view().memory.len(), 1);
        drop(engine);

        let restarted = engine_with(FixtureFeed::default(), config.clone(), small_embedder());
        let ids: Vec<_> = restarted
            .view()
            .memory
            .thoughts(Default::default())
            .iter()
            .map(|t| t.id.clone())
            .collect();
        assert_eq!(ids, vec!["answer-000001", "answer-000002", "answer-000003"]);
        assert_eq!(restarted.next_thought_id(ThoughtKind::Idea), "idea-000004");
        restarted.shutdown();
        drop(restarted);
        let again = engine_with(FixtureFeed::default(), config, small_embedder());
        assert_eq!(again.view().memory.len(), 3);
    }

    #[test]
    fn serve_sheds_load_after_deadline() {
        let config = EngineConfig {
            service_concurrency: 1,
            overload_deadline: Duration::from_millis(50),
            ..Default::default()
        };
        let engine = engine_with(FixtureFeed::default(), config, small_embedder());
        let (entered_tx, entered_rx) = mpsc::channel();
        let (release_tx, release_rx) = mpsc::channel::<()>();
        let busy = {
            let engine = engine.clone();
            thread::spawn(move || {
                engine
                    .serve(|_| {
                        entered_tx.send(()).unwrap();
                        release_rx.recv().unwrap();
                    })
                    .unwrap();
            })
        };
        entered_rx.recv().unwrap();
        let err = engine.serve(|_| ()).unwrap_err();
        assert!(matches!(err, EngineError::Overloaded));
        assert!(err.is_retriable());
        release_tx.send(()).unwrap();
        busy.join().unwrap();
        assert!(engine.serve(|_| ()).is_ok());
    }

    #[test]
    fn reopened_engine_restores_library() {
        let dir = tempfile::tempdir().unwrap();
        let config = EngineConfig {
            data_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let feed = FixtureFeed::from_records((0..4).map(|i| paper(&format!("p{i}"), "2024-06-10")));
        let engine = engine_with(feed.clone(), config.clone(), small_embedder());
        engine.run_daily_update(date("2024-06-10")).unwrap();
        let matrix = engine.view().library.papers.to_matrix();
        drop(engine);
        // Lose the pool files: the engine must rebuild them from the corpus.
        std::fs::remove_file(dir.path().join("papers.pool")).unwrap();
        let engine = engine_with(feed, config, small_embedder());
        assert_eq!(engine.view().library.papers.to_matrix(), matrix);
        assert_eq!(engine.rebuild_paper_pool().unwrap(), 4);
        assert_eq!(engine.view().library.papers.to_matrix(), matrix);
    }
}
