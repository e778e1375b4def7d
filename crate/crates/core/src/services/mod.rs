//! The personalized pipelines: profile, trends, ideas and dual-answer chat,
//! with feedback, telemetry, sign-up and the weekly report.

mod stores;

use std::collections::HashSet;
use std::io;
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheKey, Computed, Namespace, ResponseCache, Selector};
use crate::clock::Clock;
use crate::corpus::{search_by_author, CorpusError, PaperRecord, TimeRange, AUTHOR_SEARCH_CAP};
use crate::engine::{Engine, EngineError, ServeView};
use crate::llm::{
    render_chat_prompt, render_idea_prompt, render_profile_prompt, render_trend_prompt, ContextItem, LlmError,
    LlmGateway,
};
use crate::persist::write_atomic;
use crate::retrieval::{
    chat_context_for, retrieve_naive, retrieve_trend_papers, Candidate, RetrievalError, RetrievalHit, Source,
    DEFAULT_K,
};
use crate::text::{normalize_name, sha256_hex};
use crate::thoughtstore::{Thought, ThoughtKind};

pub use stores::{
    is_valid_email, profile_hash, ChatExchange, ExchangeStore, Kept, ProfileOrigin, ProfileStore, Signup,
    SignupStore, Telemetry, TelemetryEvent, TelemetrySummary, UserProfile, Verdict,
};

/// Shown as the topics of a bundle whose time window holds no papers.
pub const EMPTY_WINDOW_TOPICS: &str = "No papers were published in the selected time range.";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("name is empty")]
    EmptyName,
    #[error("{0} is empty")]
    EmptyText(&'static str),
    #[error("email address is malformed")]
    InvalidEmail,
    #[error("minutes must be a non-negative number")]
    InvalidMinutes,
    #[error("no profile for {0:?}; set or edit a profile first")]
    NoProfile(String),
    #[error("{0:?} has not signed up for the weekly report")]
    NotSignedUp(String),
    #[error("exchange {0:?} not found")]
    ExchangeNotFound(String),
    #[error("exchange {0:?} already has feedback")]
    FeedbackAlreadyGiven(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("storage: {0}")]
    Io(#[from] io::Error),
    #[error("encoding: {0}")]
    Encoding(#[from] serde_json::Error),
}

impl ServiceError {
    pub fn is_retriable(&self) -> bool {
        match self {
            ServiceError::Llm(e) => e.is_retriable(),
            ServiceError::Engine(e) => e.is_retriable(),
            ServiceError::Corpus(CorpusError::Feed(e)) => e.is_retriable(),
            _ => false,
        }
    }
}

/// The three deployment optimizations, each of which can be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    /// Retrieve from pre-computed pools; off re-embeds every candidate.
    pub precompute: bool,
    /// Serve repeated profile/trend/idea requests from the response cache.
    pub cache: bool,
    /// Record thoughts asynchronously and produce both chat answers
    /// concurrently; off does both inline and in sequence.
    pub parallel_engine: bool,
}

impl Toggles {
    pub const ALL_ON: Toggles = Toggles {
        precompute: true,
        cache: true,
        parallel_engine: true,
    };
    pub const ALL_OFF: Toggles = Toggles {
        precompute: false,
        cache: false,
        parallel_engine: false,
    };
}

impl Default for Toggles {
    fn default() -> Self {
        Self::ALL_ON
    }
}

#[derive(Debug, Clone)]
pub struct CopilotConfig {
    pub k: usize,
    pub toggles: Toggles,
    /// Directory for profiles, exchanges, telemetry and sign-ups. In-memory
    /// stores when unset.
    pub data_dir: Option<PathBuf>,
    /// Where weekly reports are written. Not written when unset.
    pub outbox: Option<PathBuf>,
}

impl Default for CopilotConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            toggles: Toggles::ALL_ON,
            data_dir: None,
            outbox: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ProfileOutcome {
    Profile(UserProfile),
    /// The feed knows no publications under this name; the user should
    /// write the profile by hand.
    NoPublications { user: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendingPaper {
    pub id: String,
    pub title: String,
    pub published: NaiveDate,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendBundle {
    pub user: String,
    pub range: TimeRange,
    pub trending_papers: Vec<TrendingPaper>,
    pub topics: String,
    pub ideas: String,
    pub generated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyReport {
    pub user: String,
    pub week: String,
    pub markdown: String,
    pub path: Option<PathBuf>,
}

/// A pipeline result and whether it came from the cache.
#[derive(Debug, Clone, PartialEq)]
pub struct Served<T> {
    pub value: T,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedTrendPapers(Vec<RetrievalHit>);

pub struct Copilot {
    engine: Arc<Engine>,
    gateway: Arc<LlmGateway>,
    cache: Arc<ResponseCache>,
    clock: Arc<dyn Clock>,
    config: CopilotConfig,
    profiles: ProfileStore,
    exchanges: ExchangeStore,
    telemetry: Telemetry,
    signups: SignupStore,
}

impl Copilot {
    pub fn new(
        engine: Arc<Engine>,
        gateway: Arc<LlmGateway>,
        cache: Arc<ResponseCache>,
        clock: Arc<dyn Clock>,
        config: CopilotConfig,
    ) -> Result<Self, ServiceError> {
        let (profiles, exchanges, telemetry, signups) = match &config.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                (
                    ProfileStore::open(dir)?,
                    ExchangeStore::open(dir)?,
                    Telemetry::open(dir)?,
                    SignupStore::open(dir)?,
                )
            }
            None => (
                ProfileStore::in_memory(),
                ExchangeStore::in_memory(),
                Telemetry::in_memory(),
                SignupStore::in_memory(),
            ),
        };
        Ok(Self {
            engine,
            gateway,
            cache,
            clock,
            config,
            profiles,
            exchanges,
            telemetry,
            signups,
        })
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn cache(&self) -> &Arc<ResponseCache> {
        &self.cache
    }

    pub fn config(&self) -> &CopilotConfig {
        &self.config
    }

    pub fn profile(&self, name: &str) -> Option<Arc<UserProfile>> {
        self.profiles.get(&normalize_name(name))
    }

    pub fn exchange(&self, id: &str) -> Option<ChatExchange> {
        self.exchanges.get(id)
    }

    pub fn telemetry(&self) -> TelemetrySummary {
        self.telemetry.summary()
    }

    fn user_of(name: &str) -> Result<String, ServiceError> {
        let user = normalize_name(name);
        if user.is_empty() {
            return Err(ServiceError::EmptyName);
        }
        Ok(user)
    }

    fn cached<T: Serialize + DeserializeOwned>(
        &self,
        key: CacheKey,
        compute: impl FnOnce() -> Result<(T, bool), ServiceError>,
    ) -> Result<Served<T>, ServiceError> {
        if !self.config.toggles.cache {
            let (value, _) = compute()?;
            return Ok(Served {
                value,
                cache_hit: false,
            });
        }
        let lookup = self.cache.get_or_compute(&key, || {
            let (value, cacheable) = compute()?;
            Ok::<_, ServiceError>(Computed {
                bytes: serde_json::to_vec(&value)?,
                cacheable,
            })
        })?;
        Ok(Served {
            value: serde_json::from_slice(&lookup.bytes)?,
            cache_hit: lookup.hit,
        })
    }

    fn record_thought(&self, kind: ThoughtKind, owner: &str, text: &str, source_refs: Vec<String>) -> Result<String, ServiceError> {
        let id = self.engine.next_thought_id(kind);
        let thought = Thought {
            id: id.clone(),
            kind,
            text: text.to_string(),
            owner: owner.to_string(),
            created_at: self.clock.now(),
            source_refs,
        };
        if self.config.toggles.parallel_engine {
            self.engine.enqueue_thought(thought)?;
        } else {
            self.engine.record_thought_now(thought)?;
        }
        Ok(id)
    }

    /// Builds a profile from the author's publications. Served from the
    /// cache when the same name was already generated today and not edited
    /// since.
    pub fn generate_profile(&self, name: &str) -> Result<Served<ProfileOutcome>, ServiceError> {
        let user = Self::user_of(name)?;
        let key = CacheKey::new(Namespace::Profile, user.clone());
        self.cached(key, || {
            let feed = self.engine.feed();
            let papers = search_by_author(&user, feed.as_ref(), self.engine.config().retry, AUTHOR_SEARCH_CAP)?;
            if papers.is_empty() {
                return Ok((ProfileOutcome::NoPublications { user: user.clone() }, false));
            }
            let prompt = render_profile_prompt(&papers, self.gateway.budget()).map_err(LlmError::from)?;
            let text = self.gateway.complete(&prompt)?;
            let profile = UserProfile {
                user: user.clone(),
                text,
                origin: ProfileOrigin::Generated,
                updated_at: self.clock.now(),
            };
            if let Some(old) = self.profiles.put(profile.clone())? {
                self.invalidate_profile(&old);
            }
            Ok((ProfileOutcome::Profile(profile), true))
        })
    }

    fn invalidate_profile(&self, profile: &UserProfile) {
        self.cache.invalidate(&Selector::prefix(format!("{}|", profile.hash())));
    }

    /// Replaces the stored profile with hand-written text and drops every
    /// cached response derived from the previous one.
    pub fn edit_profile(&self, name: &str, text: &str) -> Result<UserProfile, ServiceError> {
        let user = Self::user_of(name)?;
        let text = text.trim();
        if text.is_empty() {
            return Err(ServiceError::EmptyText("profile text"));
        }
        let profile = UserProfile {
            user: user.clone(),
            text: text.to_string(),
            origin: ProfileOrigin::Edited,
            updated_at: self.clock.now(),
        };
        let old = self.profiles.put(profile.clone())?;
        self.cache.remove(&CacheKey::new(Namespace::Profile, user.clone()));
        if let Some(old) = old {
            self.invalidate_profile(&old);
        }
        self.invalidate_profile(&profile);
        Ok(profile)
    }

    fn trend_hits(
        &self,
        view: &ServeView,
        profile: &UserProfile,
        range: TimeRange,
        today: NaiveDate,
    ) -> Result<Vec<RetrievalHit>, ServiceError> {
        let embedder = self.engine.embedder().as_ref();
        let lib = &view.library;
        if self.config.toggles.precompute {
            return Ok(retrieve_trend_papers(
                embedder,
                &profile.text,
                &lib.corpus,
                &lib.papers,
                range,
                today,
                self.config.k,
            )?);
        }
        let window = lib.corpus.select_range(range, today);
        if window.is_empty() {
            return Ok(Vec::new());
        }
        let candidates: Vec<Candidate> = window
            .papers()
            .iter()
            .map(|p| Candidate {
                source: Source::Papers,
                id: &p.id,
                recency: p.recency(),
                text: &p.r#abstract,
            })
            .collect();
        Ok(retrieve_naive(embedder, &profile.text, &candidates, self.config.k)?)
    }

    /// Trending papers for a profile within a range, cached for the day.
    fn trending_papers(
        &self,
        view: &ServeView,
        profile: &UserProfile,
        range: TimeRange,
        today: NaiveDate,
    ) -> Result<Vec<RetrievalHit>, ServiceError> {
        let key = CacheKey::new(
            Namespace::TrendPapers,
            format!("{}|{}|{today}", profile.hash(), range.as_str()),
        );
        let served = self.cached(key, || {
            let hits = self.trend_hits(view, profile, range, today)?;
            let cacheable = !hits.is_empty();
            Ok((CachedTrendPapers(hits), cacheable))
        })?;
        Ok(served.value.0)
    }

    /// Trending papers, topic summary and ideas for the user's profile.
    /// A fresh bundle records one trend thought and one idea thought.
    pub fn generate_trends(&self, name: &str, range: TimeRange) -> Result<Served<TrendBundle>, ServiceError> {
        let user = Self::user_of(name)?;
        let profile = self.profiles.get(&user).ok_or_else(|| ServiceError::NoProfile(user.clone()))?;
        let today = self.clock.today();
        let key = CacheKey::new(
            Namespace::Trends,
            format!("{}|{}|{today}", profile.hash(), range.as_str()),
        );
        self.cached(key, || {
            let view = self.engine.view();
            let hits = self.trending_papers(&view, &profile, range, today)?;
            let generated_at = self.clock.now();
            if hits.is_empty() {
                let bundle = TrendBundle {
                    user: user.clone(),
                    range,
                    trending_papers: Vec::new(),
                    topics: EMPTY_WINDOW_TOPICS.to_string(),
                    ideas: String::new(),
                    generated_at,
                };
                return Ok((bundle, false));
            }
            let papers: Vec<PaperRecord> = hits
                .iter()
                .filter_map(|h| view.library.corpus.get(&h.id).map(|p| (**p).clone()))
                .collect();
            let prompt = render_trend_prompt(&papers, self.gateway.budget()).map_err(LlmError::from)?;
            let topics = self.gateway.complete(&prompt)?;
            let ideas = self.ideas_uncached(&topics)?;
            let paper_ids: Vec<String> = hits.iter().map(|h| h.id.clone()).collect();
            let trend_id = self.record_thought(ThoughtKind::Trend, &user, &topics, paper_ids)?;
            self.record_thought(ThoughtKind::Idea, &user, &ideas, vec![trend_id])?;
            if self.config.toggles.cache {
                self.cache.put(
                    self.ideas_key(&profile.hash(), today, &topics),
                    serde_json::to_vec(&ideas)?,
                );
            }
            let trending_papers = hits
                .iter()
                .zip(&papers)
                .map(|(h, p)| TrendingPaper {
                    id: h.id.clone(),
                    title: p.title.clone(),
                    published: p.published,
                    score: h.score,
                })
                .collect();
            let bundle = TrendBundle {
                user: user.clone(),
                range,
                trending_papers,
                topics,
                ideas,
                generated_at,
            };
            Ok((bundle, true))
        })
    }

    fn ideas_key(&self, profile_hash: &str, today: NaiveDate, topics: &str) -> CacheKey {
        CacheKey::new(
            Namespace::Ideas,
            format!("{profile_hash}|{today}|{}", sha256_hex(topics.as_bytes())),
        )
    }

    fn ideas_uncached(&self, topics: &str) -> Result<String, ServiceError> {
        let prompt = render_idea_prompt(topics, self.gateway.budget()).map_err(LlmError::from)?;
        Ok(self.gateway.complete(&prompt)?)
    }

    /// Ideas for a topic summary. A fresh result is recorded as an idea
    /// thought linked to the trend thought with the same text, if any.
    pub fn generate_ideas(&self, name: &str, topics: &str) -> Result<Served<String>, ServiceError> {
        let user = Self::user_of(name)?;
        if topics.trim().is_empty() {
            return Err(ServiceError::EmptyText("topics"));
        }
        let hash = self.profiles.get(&user).map_or_else(|| profile_hash(""), |p| p.hash());
        let key = self.ideas_key(&hash, self.clock.today(), topics);
        self.cached(key, || {
            let ideas = self.ideas_uncached(topics)?;
            let memory = self.engine.view().memory;
            let refs = memory
                .thoughts(crate::thoughtstore::ThoughtFilter::kind(ThoughtKind::Trend))
                .iter()
                .rev()
                .find(|t| t.text == topics)
                .map(|t| vec![t.id.clone()])
                .unwrap_or_default();
            self.record_thought(ThoughtKind::Idea, &user, &ideas, refs)?;
            Ok((ideas, true))
        })
    }

    fn chat_hits(&self, view: &ServeView, question: &str) -> Result<(Vec<RetrievalHit>, Vec<RetrievalHit>), ServiceError> {
        let embedder = self.engine.embedder().as_ref();
        let (k, papers, thoughts) = (self.config.k, &view.library.papers, view.memory.pool());
        if self.config.toggles.precompute {
            if question.trim().is_empty() {
                return Err(RetrievalError::EmptyQuery.into());
            }
            let q = embedder.embed(question).map_err(RetrievalError::from)?;
            return Ok((
                chat_context_for(&q, papers, thoughts, k, true)?,
                chat_context_for(&q, papers, thoughts, k, false)?,
            ));
        }
        let paper_candidates: Vec<Candidate> = view
            .library
            .corpus
            .papers()
            .iter()
            .map(|p| Candidate {
                source: Source::Papers,
                id: &p.id,
                recency: p.recency(),
                text: &p.r#abstract,
            })
            .collect();
        let all_thoughts = view.memory.thoughts(Default::default());
        let mut with_thoughts = paper_candidates.clone();
        with_thoughts.extend(all_thoughts.iter().map(|t| Candidate {
            source: Source::Thoughts,
            id: &t.id,
            recency: t.created_at.timestamp(),
            text: &t.text,
        }));
        Ok((
            retrieve_naive(embedder, question, &with_thoughts, k)?,
            retrieve_naive(embedder, question, &paper_candidates, k)?,
        ))
    }

    fn context_items(view: &ServeView, hits: &[RetrievalHit]) -> Vec<ContextItem> {
        hits.iter()
            .filter_map(|h| match h.source {
                Source::Papers => view.library.corpus.get(&h.id).map(|p| ContextItem {
                    label: format!("paper {}: {}", p.id, p.title),
                    text: p.r#abstract.clone(),
                    score: h.score,
                }),
                Source::Thoughts => view.memory.get(&h.id).map(|t| ContextItem {
                    label: format!("{} {}", t.kind.as_str(), t.id),
                    text: t.text.clone(),
                    score: h.score,
                }),
            })
            .collect()
    }

    /// Two answers to one question: one grounded in papers and stored
    /// thoughts, one in papers alone. Nothing is stored unless both succeed,
    /// and no thought is recorded until feedback arrives.
    pub fn answer_chat(&self, name: &str, question: &str) -> Result<ChatExchange, ServiceError> {
        let user = Self::user_of(name)?;
        let question = question.trim();
        if question.is_empty() {
            return Err(ServiceError::EmptyText("question"));
        }
        let profile = self.profiles.get(&user);
        let persona = profile.as_deref().map(|p| p.text.as_str());
        let view = self.engine.view();
        let (augmented_hits, plain_hits) = self.chat_hits(&view, question)?;
        let budget = self.gateway.budget();
        let augmented_prompt = render_chat_prompt(question, &Self::context_items(&view, &augmented_hits), persona, budget)
            .map_err(LlmError::from)?;
        let plain_prompt =
            render_chat_prompt(question, &Self::context_items(&view, &plain_hits), persona, budget).map_err(LlmError::from)?;
        let (augmented, plain) = if self.config.toggles.parallel_engine {
            std::thread::scope(|s| {
                let a = s.spawn(|| self.gateway.complete(&augmented_prompt));
                let p = self.gateway.complete(&plain_prompt);
                (a.join().expect("answer thread panicked"), p)
            })
        } else {
            let a = self.gateway.complete(&augmented_prompt);
            let p = match &a {
                Ok(_) => self.gateway.complete(&plain_prompt),
                Err(e) => Err(e.clone()),
            };
            (a, p)
        };
        let exchange = ChatExchange {
            id: self.exchanges.next_id(),
            user,
            question: question.to_string(),
            answer_augmented: augmented?,
            answer_plain: plain?,
            feedback: None,
            created_at: self.clock.now(),
        };
        self.exchanges.insert(exchange.clone())?;
        Ok(exchange)
    }

    /// Resolves an exchange: the kept answer becomes an answer thought and
    /// a preference event is logged.
    pub fn apply_feedback(&self, exchange_id: &str, verdict: Verdict) -> Result<ChatExchange, ServiceError> {
        let updated = self
            .exchanges
            .update(exchange_id, |x| {
                if x.feedback.is_some() {
                    return Err(ServiceError::FeedbackAlreadyGiven(x.id.clone()));
                }
                let kept = match verdict.kept() {
                    Kept::Augmented => &x.answer_augmented,
                    Kept::Plain => &x.answer_plain,
                };
                self.record_thought(ThoughtKind::Answer, &x.user, kept, vec![x.id.clone()])?;
                x.feedback = Some(verdict);
                Ok(())
            })
            .ok_or_else(|| ServiceError::ExchangeNotFound(exchange_id.to_string()))??;
        self.telemetry.record(TelemetryEvent::Preference {
            user: updated.user.clone(),
            exchange_id: updated.id.clone(),
            augmented_preferred: verdict == Verdict::DislikePlain,
            at: self.clock.now(),
        })?;
        Ok(updated)
    }

    /// Logs how many minutes the user says the assistant saved them.
    pub fn record_saved_minutes(&self, name: &str, minutes: f64) -> Result<TelemetrySummary, ServiceError> {
        let user = Self::user_of(name)?;
        if !minutes.is_finite() || minutes < 0.0 {
            return Err(ServiceError::InvalidMinutes);
        }
        Ok(self.telemetry.record(TelemetryEvent::SavedMinutes {
            user,
            minutes,
            at: self.clock.now(),
        })?)
    }

    /// Stores an email for the weekly report. Returns false when nothing
    /// changed.
    pub fn signup(&self, name: &str, email: &str) -> Result<bool, ServiceError> {
        let user = Self::user_of(name)?;
        let email = email.trim();
        if !is_valid_email(email) {
            return Err(ServiceError::InvalidEmail);
        }
        Ok(self.signups.put(Signup {
            user,
            email: email.to_string(),
            at: self.clock.now(),
        })?)
    }

    /// Markdown report of the week's trend bundle, written to the outbox.
    pub fn compose_weekly_report(&self, name: &str) -> Result<Served<WeeklyReport>, ServiceError> {
        let user = Self::user_of(name)?;
        let signup = self.signups.get(&user).ok_or_else(|| ServiceError::NotSignedUp(user.clone()))?;
        let profile = self.profiles.get(&user).ok_or_else(|| ServiceError::NoProfile(user.clone()))?;
        let iso = self.clock.today().iso_week();
        let week = format!("{}-W{:02}", iso.year(), iso.week());
        let key = CacheKey::new(Namespace::Report, format!("{}|{week}", profile.hash()));
        let served = self.cached(key, || {
            let bundle = self.generate_trends(&user, TimeRange::Week)?.value;
            let markdown = render_report(&user, &signup.email, &week, &bundle);
            let cacheable = !bundle.trending_papers.is_empty();
            Ok((
                WeeklyReport {
                    user: user.clone(),
                    week: week.clone(),
                    markdown,
                    path: None,
                },
                cacheable,
            ))
        })?;
        let mut report = served.value;
        if let Some(outbox) = &self.config.outbox {
            std::fs::create_dir_all(outbox)?;
            let slug: String = user
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
                .collect();
            let path = outbox.join(format!("{slug}-{week}.md"));
            write_atomic(&path, report.markdown.as_bytes())?;
            report.path = Some(path);
        }
        Ok(Served {
            value: report,
            cache_hit: served.cache_hit,
        })
    }

    /// Ids of every paper mentioned in a bundle, for tests and the report.
    pub fn bundle_paper_ids(bundle: &TrendBundle) -> HashSet<&str> {
        bundle.trending_papers.iter().map(|p| p.id.as_str()).collect()
    }
}

fn render_report(user: &str, email: &str, week: &str, bundle: &TrendBundle) -> String {
    let mut md = format!("# Weekly research report {week}\n\nFor: {user} <{email}>\n\n## Trending Papers\n\n");
    if bundle.trending_papers.is_empty() {
        md.push_str("No papers in range.\n");
    }
    for p in &bundle.trending_papers {
        md.push_str(&format!("- {} ({}, {}) score {:.4}\n", p.title, p.id, p.published, p.score));
    }
    md.push_str("\n## Trending Topics\n\n");
    md.push_str(&bundle.topics);
    md.push_str("\n\n## Ideas for Trending Topic\n\n");
    md.push_str(&bundle.ideas);
    md.push('\n');
    md
}
