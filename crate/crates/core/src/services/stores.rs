//! Small persistent stores behind the pipelines: profiles, chat exchanges,
//! telemetry and sign-ups. Each one is a map guarded by a lock plus an
//! optional append-only log; the last line for a key wins on reload.

use std::collections::HashMap;
use std::io;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::persist::JsonlLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileOrigin {
    Generated,
    Edited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user: String,
    pub text: String,
    pub origin: ProfileOrigin,
    pub updated_at: DateTime<Utc>,
}

impl UserProfile {
    /// Short digest of the profile text; prefixes every cache key derived
    /// from this profile.
    pub fn hash(&self) -> String {
        profile_hash(&self.text)
    }
}

pub fn profile_hash(text: &str) -> String {
    crate::text::sha256_hex(text.as_bytes())[..16].to_string()
}

pub struct ProfileStore {
    profiles: RwLock<HashMap<String, Arc<UserProfile>>>,
    log: Option<JsonlLog<UserProfile>>,
}

impl ProfileStore {
    pub fn in_memory() -> Self {
        Self {
            profiles: RwLock::new(HashMap::new()),
            log: None,
        }
    }

    pub fn open(dir: &Path) -> io::Result<Self> {
        let log = JsonlLog::<UserProfile>::new(dir.join("profiles.jsonl"));
        let profiles = log
            .load()?
            .into_iter()
            .map(|p| (p.user.clone(), Arc::new(p)))
            .collect();
        Ok(Self {
            profiles: RwLock::new(profiles),
            log: Some(log),
        })
    }

    pub fn get(&self, user: &str) -> Option<Arc<UserProfile>> {
        self.profiles.read().unwrap().get(user).cloned()
    }

    /// Stores `profile`, returning the one it replaced.
    pub fn put(&self, profile: UserProfile) -> io::Result<Option<Arc<UserProfile>>> {
        let mut profiles = self.profiles.write().unwrap();
        if let Some(log) = &self.log {
            log.append(&profile)?;
        }
        Ok(profiles.insert(profile.user.clone(), Arc::new(profile)))
    }

    pub fn len(&self) -> usize {
        self.profiles.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Feedback on the second (paper-only) answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    LikePlain,
    DislikePlain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kept {
    Augmented,
    Plain,
}

impl Verdict {
    /// Liking the paper-only answer removes the augmented one, and the
    /// other way round.
    pub fn kept(self) -> Kept {
        match self {
            Verdict::LikePlain => Kept::Plain,
            Verdict::DislikePlain => Kept::Augmented,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub id: String,
    pub user: String,
    pub question: String,
    pub answer_augmented: String,
    pub answer_plain: String,
    pub feedback: Option<Verdict>,
    pub created_at: DateTime<Utc>,
}

impl ChatExchange {
    pub fn kept(&self) -> Option<Kept> {
        self.feedback.map(Verdict::kept)
    }

    /// Answers still on display: both before feedback, one after.
    pub fn surviving(&self) -> Vec<&str> {
        match self.kept() {
            None => vec![&self.answer_augmented, &self.answer_plain],
            Some(Kept::Augmented) => vec![&self.answer_augmented],
            Some(Kept::Plain) => vec![&self.answer_plain],
        }
    }
}

struct Exchanges {
    by_id: HashMap<String, ChatExchange>,
    seq: u64,
}

pub struct ExchangeStore {
    inner: Mutex<Exchanges>,
    log: Option<JsonlLog<ChatExchange>>,
}

impl ExchangeStore {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(Exchanges {
                by_id: HashMap::new(),
                seq: 0,
            }),
            log: None,
        }
    }

    pub fn open(dir: &Path) -> io::Result<Self> {
        let log = JsonlLog::<ChatExchange>::new(dir.join("exchanges.jsonl"));
        let mut inner = Exchanges {
            by_id: HashMap::new(),
            seq: 0,
        };
        for x in log.load()? {
            if let Some(n) = x.id.strip_prefix('x').and_then(|n| n.parse::<u64>().ok()) {
                inner.seq = inner.seq.max(n);
            }
            inner.by_id.insert(x.id.clone(), x);
        }
        Ok(Self {
            inner: Mutex::new(inner),
            log: Some(log),
        })
    }

    pub fn next_id(&self) -> String {
        let mut inner = self.inner.lock().unwrap();
        inner.seq += 1;
        format!("x{:06}", inner.seq)
    }

    pub fn insert(&self, exchange: ChatExchange) -> io::Result<()> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(log) = &self.log {
            log.append(&exchange)?;
        }
        inner.by_id.insert(exchange.id.clone(), exchange);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<ChatExchange> {
        self.inner.lock().unwrap().by_id.get(id).cloned()
    }

    /// Runs `f` on the stored exchange under the store lock and persists
    /// the result if `f` succeeds.
    pub fn update<E: From<io::Error>>(
        &self,
        id: &str,
        f: impl FnOnce(&mut ChatExchange) -> Result<(), E>,
    ) -> Option<Result<ChatExchange, E>> {
        let mut inner = self.inner.lock().unwrap();
        let current = inner.by_id.get(id)?;
        let mut next = current.clone();
        Some((|| {
            f(&mut next)?;
            if let Some(log) = &self.log {
                log.append(&next)?;
            }
            inner.by_id.insert(next.id.clone(), next.clone());
            Ok(next)
        })())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TelemetryEvent {
    Preference {
        user: String,
        exchange_id: String,
        augmented_preferred: bool,
        at: DateTime<Utc>,
    },
    SavedMinutes {
        user: String,
        minutes: f64,
        at: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySummary {
    pub preferences: u64,
    pub augmented_preferred: u64,
    pub comments: u64,
    pub minutes_total: f64,
}

impl TelemetrySummary {
    /// Share of feedback events that kept the thought-augmented answer.
    pub fn augmented_preference_rate(&self) -> Option<f64> {
        (self.preferences > 0).then(|| self.augmented_preferred as f64 / self.preferences as f64)
    }

    pub fn mean_minutes(&self) -> Option<f64> {
        (self.comments > 0).then(|| self.minutes_total / self.comments as f64)
    }

    fn add(&mut self, event: &TelemetryEvent) {
        match event {
            TelemetryEvent::Preference {
                augmented_preferred, ..
            } => {
                self.preferences += 1;
                self.augmented_preferred += u64::from(*augmented_preferred);
            }
            TelemetryEvent::SavedMinutes { minutes, .. } => {
                self.comments += 1;
                self.minutes_total += minutes;
            }
        }
    }
}

pub struct Telemetry {
    summary: Mutex<TelemetrySummary>,
    log: Option<JsonlLog<TelemetryEvent>>,
}

impl Telemetry {
    pub fn in_memory() -> Self {
        Self {
            summary: Mutex::new(TelemetrySummary::default()),
            log: None,
        }
    }

    pub fn open(dir: &Path) -> io::Result<Self> {
        let log = JsonlLog::<TelemetryEvent>::new(dir.join("telemetry.jsonl"));
        let mut summary = TelemetrySummary::default();
        for e in log.load()? {
            summary.add(&e);
        }
        Ok(Self {
            summary: Mutex::new(summary),
            log: Some(log),
        })
    }

    pub fn record(&self, event: TelemetryEvent) -> io::Result<TelemetrySummary> {
        let mut summary = self.summary.lock().unwrap();
        if let Some(log) = &self.log {
            log.append(&event)?;
        }
        summary.add(&event);
        Ok(*summary)
    }

    pub fn summary(&self) -> TelemetrySummary {
        *self.summary.lock().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signup {
    pub user: String,
    pub email: String,
    pub at: DateTime<Utc>,
}

pub struct SignupStore {
    by_user: RwLock<HashMap<String, Signup>>,
    log: Option<JsonlLog<Signup>>,
}

impl SignupStore {
    pub fn in_memory() -> Self {
        Self {
            by_user: RwLock::new(HashMap::new()),
            log: None,
        }
    }

    pub fn open(dir: &Path) -> io::Result<Self> {
        let log = JsonlLog::<Signup>::new(dir.join("signups.jsonl"));
        let by_user = log.load()?.into_iter().map(|s| (s.user.clone(), s)).collect();
        Ok(Self {
            by_user: RwLock::new(by_user),
            log: Some(log),
        })
    }

    /// Returns false when the same user and email were already stored.
    pub fn put(&self, signup: Signup) -> io::Result<bool> {
        let mut by_user = self.by_user.write().unwrap();
        if by_user.get(&signup.user).is_some_and(|s| s.email == signup.email) {
            return Ok(false);
        }
        if let Some(log) = &self.log {
            log.append(&signup)?;
        }
        by_user.insert(signup.user.clone(), signup);
        Ok(true)
    }

    pub fn get(&self, user: &str) -> Option<Signup> {
        self.by_user.read().unwrap().get(user).cloned()
    }
}

/// Syntactic check only: one `@`, a non-empty local part, and a dotted
/// domain without empty labels or whitespace.
pub fn is_valid_email(email: &str) -> bool {
    let Some((local, domain)) = email.split_once('@') else {
        return false;
    };
    !local.is_empty()
        && !domain.contains('@')
        && !email.chars().any(char::is_whitespace)
        && domain.contains('.')
        && domain.split('.').all(|label| !label.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(n: i64) -> DateTime<Utc> {
        DateTime::from_timestamp(n, 0).unwrap()
    }

    #[test]
    fn email_syntax() {
        for ok in ["a@b.co", "first.last@uni.example.edu"] {
            assert!(is_valid_email(ok), "{ok}");
        }
        for bad in ["", "a", "@b.co", "a@b", "a@@b.co", "a@b..co", "a b@c.de", "a@.co"] {
            assert!(!is_valid_email(bad), "{bad}");
        }
    }

    #[test]
    fn preference_rate_and_mean() {
        let t = Telemetry::in_memory();
        for i in 0..5 {
            t.record(TelemetryEvent::Preference {
                user: "u".into(),
                exchange_id: format!("x{i}"),
                augmented_preferred: i != 0,
                at: at(i),
            })
            .unwrap();
        }
        for m in [10.0, 30.0] {
            t.record(TelemetryEvent::SavedMinutes {
                user: "u".into(),
                minutes: m,
                at: at(9),
            })
            .unwrap();
        }
        let s = t.summary();
        assert_eq!(s.augmented_preference_rate(), Some(0.8));
        assert_eq!(s.mean_minutes(), Some(20.0));
        assert_eq!(TelemetrySummary::default().mean_minutes(), None);
    }

    #[test]
    fn stores_reload_last_write() {
        let dir = tempfile::tempdir().unwrap();
        let profiles = ProfileStore::open(dir.path()).unwrap();
        for (text, origin) in [("first", ProfileOrigin::Generated), ("second", ProfileOrigin::Edited)] {
            profiles
                .put(UserProfile {
                    user: "alice".into(),
                    text: text.into(),
                    origin,
                    updated_at: at(1),
                })
                .unwrap();
        }
        let reopened = ProfileStore::open(dir.path()).unwrap();
        assert_eq!(reopened.get("alice").unwrap().text, "second");
        assert_eq!(reopened.len(), 1);

        let exchanges = ExchangeStore::open(dir.path()).unwrap();
        let id = exchanges.next_id();
        assert_eq!(id, "x000001");
        exchanges
            .insert(ChatExchange {
                id: id.clone(),
                user: "alice".into(),
                question: "q".into(),
                answer_augmented: "a".into(),
                answer_plain: "p".into(),
                feedback: None,
                created_at: at(2),
            })
            .unwrap();
        exchanges
            .update::<io::Error>(&id, |x| {
                x.feedback = Some(Verdict::DislikePlain);
                Ok(())
            })
            .unwrap()
            .unwrap();
        let reopened = ExchangeStore::open(dir.path()).unwrap();
        assert_eq!(reopened.get(&id).unwrap().kept(), Some(Kept::Augmented));
        assert_eq!(reopened.next_id(), "x000002");
    }

    #[test]
    fn signup_is_idempotent() {
        let s = SignupStore::in_memory();
        let signup = Signup {
            user: "alice".into(),
            email: "a@b.co".into(),
            at: at(0),
        };
        assert!(s.put(signup.clone()).unwrap());
        assert!(!s.put(signup).unwrap());
        assert_eq!(s.get("alice").unwrap().email, "a@b.co");
    }

    #[test]
    fn surviving_answers_follow_feedback() {
        let mut x = ChatExchange {
            id: "x1".into(),
            user: "u".into(),
            question: "q".into(),
            answer_augmented: "aug".into(),
            answer_plain: "plain".into(),
            feedback: None,
            created_at: at(0),
        };
        assert_eq!(x.surviving().len(), 2);
        x.feedback = Some(Verdict::LikePlain);
        assert_eq!(x.surviving(), vec!["plain"]);
        x.feedback = Some(Verdict::DislikePlain);
        assert_eq!(x.surviving(), vec!["aug"]);
    }
}
