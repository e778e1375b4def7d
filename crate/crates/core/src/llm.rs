//! Prompt templates, completion providers and the gateway that dispatches
//! to them.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PaperRecord;
use crate::feed::RetryPolicy;
use crate::text::{approx_tokens, sha256_hex};

pub const PROFILE_INSTRUCTION: &str = "Based on the list of the researcher's papers from different periods, please write a comprehensive first person persona. Focus more on recent papers. Be concise and clear (around 300 words).";
pub const TREND_INSTRUCTION: &str = "Given some recent paper titles and abstracts. Could you summarize no more than 10 top keywords of high level research backgrounds and trends.";
pub const IDEA_INSTRUCTION: &str = "How do you view this field? Do you have any novel ideas or insights?\nPlease give me 3 to 5 novel ideas and insights in bullet points. Each bullet points should be concise, containing 2 or 3 sentences.";
pub const CHAT_INSTRUCTION: &str =
    "Answer the question using the context and respond in a manner tailored to the user profile.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateName {
    Profile,
    Trend,
    Idea,
    Chat,
}

impl TemplateName {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Profile => "profile",
            TemplateName::Trend => "trend",
            TemplateName::Idea => "idea",
            TemplateName::Chat => "chat",
        }
    }
}

/// A template body with one named `{slot}`.
#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: &'static str,
    pub slot: &'static str,
}

pub const PROFILE_TEMPLATE: PromptTemplate = PromptTemplate {
    name: TemplateName::Profile,
    body: "Based on the list of the researcher's papers from different periods, please write a comprehensive first person persona. Focus more on recent papers. Be concise and clear (around 300 words).\n\nHere are the papers from different periods: {papers}",
    slot: "{papers}",
};

pub const TREND_TEMPLATE: PromptTemplate = PromptTemplate {
    name: TemplateName::Trend,
    body: "Given some recent paper titles and abstracts. Could you summarize no more than 10 top keywords of high level research backgrounds and trends.\n\nHere are the retrieved paper abstracts: {papers}",
    slot: "{papers}",
};

pub const IDEA_TEMPLATE: PromptTemplate = PromptTemplate {
    name: TemplateName::Idea,
    body: "Here is a high-level summarized trend of a research field: {trend}\n\nHow do you view this field? Do you have any novel ideas or insights?\nPlease give me 3 to 5 novel ideas and insights in bullet points. Each bullet points should be concise, containing 2 or 3 sentences.",
    slot: "{trend}",
};

impl PromptTemplate {
    fn fill(&self, value: &str) -> String {
        self.body.replacen(self.slot, value, 1)
    }

    fn base_chars(&self) -> usize {
        self.body.chars().count() - self.slot.chars().count()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("no papers to put in the {0} prompt")]
    NoPapers(&'static str),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("prompt needs {needed} tokens but the budget is {budget}")]
    OverBudget { needed: usize, budget: usize },
}

/// Prompt size limit, counted with [`approx_tokens`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBudget {
    pub max_tokens: usize,
}

impl Default for PromptBudget {
    fn default() -> Self {
        Self { max_tokens: 8192 }
    }
}

impl PromptBudget {
    fn max_chars(&self) -> usize {
        self.max_tokens * 4
    }
}

fn paper_block(p: &PaperRecord, with_date: bool) -> String {
    if with_date {
        format!(
            "\n\nTitle: {}\nPublished: {}\nAbstract: {}",
            p.title, p.published, p.r#abstract
        )
    } else {
        format!("\n\nTitle: {}\nAbstract: {}", p.title, p.r#abstract)
    }
}

/// Greedy prefix packing: items are taken in order until the next one
/// would overflow.
fn pack(base_chars: usize, blocks: impl IntoIterator<Item = String>, budget: &PromptBudget) -> (String, usize) {
    let mut used = base_chars;
    let mut out = String::new();
    let mut taken = 0;
    for block in blocks {
        let len = block.chars().count();
        if used + len > budget.max_chars() {
            break;
        }
        used += len;
        out.push_str(&block);
        taken += 1;
    }
    (out, taken)
}

fn render_papers(
    template: &PromptTemplate,
    papers: &[&PaperRecord],
    with_date: bool,
    budget: &PromptBudget,
) -> Result<String, PromptError> {
    if papers.is_empty() {
        return Err(PromptError::NoPapers(template.name.as_str()));
    }
    let (packed, taken) = pack(
        template.base_chars(),
        papers.iter().map(|p| paper_block(p, with_date)),
        budget,
    );
    if taken == 0 {
        return Err(PromptError::OverBudget {
            needed: (template.base_chars() + paper_block(papers[0], with_date).chars().count())
                .div_ceil(4),
            budget: budget.max_tokens,
        });
    }
    Ok(template.fill(&packed))
}

/// Profile prompt with papers newest first; the oldest are dropped when the
/// budget runs out.
pub fn render_profile_prompt(papers: &[PaperRecord], budget: &PromptBudget) -> Result<String, PromptError> {
    let mut ordered: Vec<&PaperRecord> = papers.iter().collect();
    ordered.sort_by(|a, b| b.published.cmp(&a.published).then_with(|| a.id.cmp(&b.id)));
    render_papers(&PROFILE_TEMPLATE, &ordered, true, budget)
}

/// Trend prompt with papers in the given (retrieval) order.
pub fn render_trend_prompt(papers: &[PaperRecord], budget: &PromptBudget) -> Result<String, PromptError> {
    let ordered: Vec<&PaperRecord> = papers.iter().collect();
    render_papers(&TREND_TEMPLATE, &ordered, false, budget)
}

pub fn render_idea_prompt(trend_text: &str, budget: &PromptBudget) -> Result<String, PromptError> {
    if trend_text.trim().is_empty() {
        return Err(PromptError::Empty("trend text"));
    }
    let prompt = IDEA_TEMPLATE.fill(trend_text);
    let needed = approx_tokens(&prompt);
    if needed > budget.max_tokens {
        return Err(PromptError::OverBudget {
            needed,
            budget: budget.max_tokens,
        });
    }
    Ok(prompt)
}

/// One retrieved text offered to the chat prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextItem {
    pub label: String,
    pub text: String,
    pub score: f32,
}

/// Chat prompt: instruction, optional profile block, context in descending
/// score order (greedy within budget), then the question.
pub fn render_chat_prompt(
    question: &str,
    context: &[ContextItem],
    profile: Option<&str>,
    budget: &PromptBudget,
) -> Result<String, PromptError> {
    if question.trim().is_empty() {
        return Err(PromptError::Empty("question"));
    }
    let mut head = String::from(CHAT_INSTRUCTION);
    if let Some(profile) = profile.filter(|p| !p.trim().is_empty()) {
        head.push_str("\n\nUser profile:\n");
        head.push_str(profile);
    }
    let tail = format!("\n\nQuestion: {question}");
    let context_header = "\n\nContext:";
    let base = head.chars().count() + tail.chars().count() + context_header.chars().count();
    if base > budget.max_chars() {
        return Err(PromptError::OverBudget {
            needed: base.div_ceil(4),
            budget: budget.max_tokens,
        });
    }
    let mut ordered: Vec<&ContextItem> = context.iter().collect();
    ordered.sort_by(|a, b| b.score.total_cmp(&a.score));
    let (packed, taken) = pack(
        base,
        ordered
            .iter()
            .enumerate()
            .map(|(i, c)| format!("\n[{}] ({}) {}", i + 1, c.label, c.text)),
        budget,
    );
    let mut prompt = head;
    if taken > 0 {
        prompt.push_str(context_header);
        prompt.push_str(&packed);
    }
    prompt.push_str(&tail);
    Ok(prompt)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider rate limit hit")]
    RateLimited,
    #[error("provider failed: {0}")]
    Failed(String),
}

impl ProviderError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, ProviderError::Timeout | ProviderError::RateLimited)
    }
}

pub trait CompletionProvider: Send + Sync {
    fn name(&self) -> &'static str;

    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, ProviderError>;
}

/// Deterministic offline provider. Its completion is
/// `MOCK(<template>:<first 16 hex of sha256(prompt)>)`.
#[derive(Debug, Default)]
pub struct MockProvider {
    calls: AtomicU64,
    latency_nanos: AtomicU64,
    failures: Mutex<VecDeque<ProviderError>>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_latency(latency: Duration) -> Self {
        let p = Self::default();
        p.set_latency(latency);
        p
    }

    pub fn set_latency(&self, latency: Duration) {
        self.latency_nanos.store(latency.as_nanos() as u64, Ordering::SeqCst);
    }

    /// Dispatches so far, including failed ones.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// The next `errors.len()` dispatches fail with these errors, in order.
    pub fn fail_next(&self, errors: impl IntoIterator<Item = ProviderError>) {
        self.failures.lock().unwrap().extend(errors);
    }

    pub fn digest(prompt: &str) -> String {
        format!("MOCK({}:{})", template_of(prompt), &sha256_hex(prompt.as_bytes())[..16])
    }
}

fn template_of(prompt: &str) -> &'static str {
    [
        (PROFILE_TEMPLATE.body, TemplateName::Profile),
        (TREND_TEMPLATE.body, TemplateName::Trend),
        (IDEA_TEMPLATE.body, TemplateName::Idea),
        (CHAT_INSTRUCTION, TemplateName::Chat),
    ]
    .iter()
    .find(|(body, _)| {
        let prefix = &body[..body.find('{').unwrap_or(body.len()).min(40)];
        prompt.starts_with(prefix)
    })
    .map_or("text", |(_, name)| name.as_str())
}

impl CompletionProvider for MockProvider {
    fn name(&self) -> &'static str {
        "mock"
    }

    fn complete(&self, prompt: &str, _max_tokens: usize) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let latency = Duration::from_nanos(self.latency_nanos.load(Ordering::SeqCst));
        if !latency.is_zero() {
            thread::sleep(latency);
        }
        if let Some(err) = self.failures.lock().unwrap().pop_front() {
            return Err(err);
        }
        Ok(Self::digest(prompt))
    }
}

/// OpenAI-compatible chat-completions client.
pub struct LiveProvider {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: String,
}

impl LiveProvider {
    pub fn new(base_url: &str, model: &str, api_key: String, timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client");
        Self {
            client,
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
        }
    }
}

impl CompletionProvider for LiveProvider {
    fn name(&self) -> &'static str {
        "live"
    }

    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, ProviderError> {
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(&serde_json::json!({
                "model": self.model,
                "max_tokens": max_tokens,
                "messages": [{ "role": "user", "content": prompt }],
            }))
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    ProviderError::Timeout
                } else {
                    ProviderError::Failed(e.to_string())
                }
            })?;
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(ProviderError::RateLimited);
        }
        if status.as_u16() == 408 || status.as_u16() == 504 {
            return Err(ProviderError::Timeout);
        }
        if !status.is_success() {
            return Err(ProviderError::Failed(format!("HTTP {status}")));
        }
        let body: serde_json::Value = resp.json().map_err(|e| ProviderError::Failed(e.to_string()))?;
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Failed("response has no message content".into()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("provider returned an empty completion")]
    EmptyCompletion,
}

impl LlmError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, LlmError::Provider(e) if e.is_retriable())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GatewayConfig {
    pub budget: PromptBudget,
    pub completion_tokens: usize,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            budget: PromptBudget::default(),
            completion_tokens: 1024,
            retry: RetryPolicy::default(),
            max_in_flight: 16,
        }
    }
}

#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Budget check, bounded concurrency and retries around a provider.
pub struct LlmGateway {
    provider: Arc<dyn CompletionProvider>,
    config: GatewayConfig,
    permits: Permits,
}

impl LlmGateway {
    pub fn new(provider: Arc<dyn CompletionProvider>, config: GatewayConfig) -> Self {
        Self {
            provider,
            permits: Permits {
                free: Mutex::new(config.max_in_flight.max(1)),
                cv: Condvar::new(),
            },
            config,
        }
    }

    pub fn budget(&self) -> &PromptBudget {
        &self.config.budget
    }

    pub fn provider_name(&self) -> &'static str {
        self.provider.name()
    }

    pub fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let needed = approx_tokens(prompt);
        if needed > self.config.budget.max_tokens {
            return Err(PromptError::OverBudget {
                needed,
                budget: self.config.budget.max_tokens,
            }
            .into());
        }
        let _permit = self.permits.acquire();
        let text = self.config.retry.run(
            || self.provider.complete(prompt, self.config.completion_tokens),
            ProviderError::is_retriable,
        )?;
        if text.trim().is_empty() {
            return Err(LlmError::EmptyCompletion);
        }
        Ok(text)
    }
}
