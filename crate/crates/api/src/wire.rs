//! Request and response bodies. Every type here has a schema under
//! `schemas/`.

use chrono::{DateTime, NaiveDate, Utc};
use copilot_core::services::{ChatExchange, Kept, ProfileOrigin, TrendingPaper, Verdict};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRequest {
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditProfileRequest {
    pub name: String,
    pub text: String,
}

/// `code` is only present for `NO_PUBLICATIONS`, where `profile` is empty
/// and the client is expected to edit one in by hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileResponse {
    pub profile: String,
    pub origin: ProfileOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
}

pub const NO_PUBLICATIONS: &str = "NO_PUBLICATIONS";

#[derive(Debug, Clone, Deserialize)]
pub struct TrendsQuery {
    pub name: String,
    pub range: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendsResponse {
    pub trending_papers: Vec<TrendingPaper>,
    pub topics: String,
    pub ideas: String,
    pub generated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRequest {
    pub name: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatResponse {
    pub exchange_id: String,
    pub answer_augmented: String,
    pub answer_plain: String,
}

/// Verdict on the second, paper-only answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireVerdict {
    Like,
    Dislike,
}

impl From<WireVerdict> for Verdict {
    fn from(v: WireVerdict) -> Self {
        match v {
            WireVerdict::Like => Verdict::LikePlain,
            WireVerdict::Dislike => Verdict::DislikePlain,
        }
    }
}

impl From<Verdict> for WireVerdict {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::LikePlain => WireVerdict::Like,
            Verdict::DislikePlain => WireVerdict::Dislike,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExchangeResponse {
    pub exchange_id: String,
    pub name: String,
    pub question: String,
    pub answer_augmented: String,
    pub answer_plain: String,
    pub verdict: Option<WireVerdict>,
    pub kept: Option<Kept>,
    pub created_at: DateTime<Utc>,
}

impl From<ChatExchange> for ExchangeResponse {
    fn from(x: ChatExchange) -> Self {
        Self {
            kept: x.kept(),
            verdict: x.feedback.map(Into::into),
            exchange_id: x.id,
            name: x.user,
            question: x.question,
            answer_augmented: x.answer_augmented,
            answer_plain: x.answer_plain,
            created_at: x.created_at,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub verdict: WireVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackResponse {
    pub kept: Kept,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommentRequest {
    pub name: String,
    pub minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommentResponse {
    pub ack: bool,
    pub mean_minutes: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignupRequest {
    pub name: String,
    pub email: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AckResponse {
    pub ack: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRequest {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportResponse {
    pub week: String,
    pub markdown: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealthResponse {
    pub status: String,
    pub papers: usize,
    pub thoughts: usize,
    pub library_generation: u64,
    pub queue_depth: usize,
    pub as_of: Option<NaiveDate>,
    pub last_publish: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct UpdateQuery {
    pub date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateResponse {
    pub date: NaiveDate,
    pub new_papers: usize,
    pub pool_rows_added: usize,
    pub duplicates: usize,
    pub malformed: usize,
    pub generation: u64,
}
