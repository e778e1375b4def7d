//! Exact top-k cosine retrieval over pool snapshots.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusSnapshot, TimeRange};
use crate::embed::{dot, EmbedError, Embedder, EmbeddingVector};
use crate::featurepool::PoolSnapshot;

/// Default number of hits for both trend and chat retrieval.
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query dimension {query} does not match pool dimension {pool}")]
    Dimension { query: usize, pool: usize },
    #[error("query text is empty")]
    EmptyQuery,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Papers,
    Thoughts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub id: String,
    pub score: f32,
    pub source: Source,
    #[serde(skip)]
    pub recency: i64,
}

/// Ranking order: higher score, then newer, then smaller id.
pub fn rank_order(a: &RetrievalHit, b: &RetrievalHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.recency.cmp(&a.recency))
        .then_with(|| a.id.cmp(&b.id))
}

struct Ranked(RetrievalHit);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        rank_order(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    // The heap's maximum is the worst-ranked hit kept so far.
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0)
    }
}

/// Top-k over the concatenation of `pools`, optionally restricted to ids
/// in `filter`.
pub fn retrieve_topk(
    query: &EmbeddingVector,
    pools: &[(Source, &PoolSnapshot)],
    k: usize,
    filter: Option<&HashSet<&str>>,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    for (_, pool) in pools {
        if !pool.is_empty() && pool.dim() != query.dim() {
            return Err(RetrievalError::Dimension {
                query: query.dim(),
                pool: pool.dim(),
            });
        }
    }
    let q = query.as_slice();
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
    for (source, pool) in pools {
        for row in pool.rows() {
            if filter.is_some_and(|f| !f.contains(row.id)) {
                continue;
            }
            let score = dot(q, row.values);
            if heap.len() == k {
                let worst = &heap.peek().expect("non-empty").0;
                let beats = score > worst.score
                    || (score == worst.score
                        && (row.recency > worst.recency
                            || (row.recency == worst.recency && row.id < worst.id.as_str())));
                if !beats {
                    continue;
                }
                heap.pop();
            }
            heap.push(Ranked(RetrievalHit {
                id: row.id.to_string(),
                score,
                source: *source,
                recency: row.recency,
            }));
        }
    }
    Ok(heap.into_sorted_vec().into_iter().map(|r| r.0).collect())
}

fn embed_query(embedder: &dyn Embedder, text: &str) -> Result<EmbeddingVector, RetrievalError> {
    if text.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    Ok(embedder.embed(text)?)
}

/// Papers most similar to a profile text within a time window. An empty
/// window gives an empty result.
pub fn retrieve_trend_papers(
    embedder: &dyn Embedder,
    profile_text: &str,
    corpus: &CorpusSnapshot,
    papers: &PoolSnapshot,
    range: TimeRange,
    now: NaiveDate,
    k: usize,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    if profile_text.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let window = corpus.select_range(range, now);
    if window.is_empty() {
        return Ok(Vec::new());
    }
    let query = embed_query(embedder, profile_text)?;
    if range == TimeRange::All {
        return retrieve_topk(&query, &[(Source::Papers, papers)], k, None);
    }
    let allowed: HashSet<&str> = window.ids().collect();
    retrieve_topk(&query, &[(Source::Papers, papers)], k, Some(&allowed))
}

/// Context for a chat question: papers and thoughts when `include_thoughts`
/// is set, papers only otherwise.
pub fn retrieve_chat_context(
    embedder: &dyn Embedder,
    question: &str,
    papers: &PoolSnapshot,
    thoughts: &PoolSnapshot,
    k: usize,
    include_thoughts: bool,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    let query = embed_query(embedder, question)?;
    chat_context_for(&query, papers, thoughts, k, include_thoughts)
}

/// Same as [`retrieve_chat_context`] with an already embedded question.
pub fn chat_context_for(
    query: &EmbeddingVector,
    papers: &PoolSnapshot,
    thoughts: &PoolSnapshot,
    k: usize,
    include_thoughts: bool,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    if include_thoughts {
        retrieve_topk(query, &[(Source::Papers, papers), (Source::Thoughts, thoughts)], k, None)
    } else {
        retrieve_topk(query, &[(Source::Papers, papers)], k, None)
    }
}

/// A stored item as raw text, for retrieval without a pre-computed pool.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub source: Source,
    pub id: &'a str,
    pub recency: i64,
    pub text: &'a str,
}

/// Retrieval without feature pre-computation: embeds the query and then
/// every candidate, on every call. Produces the same hits as the pooled
/// path because the embedder is deterministic.
pub fn retrieve_naive(
    embedder: &dyn Embedder,
    query_text: &str,
    candidates: &[Candidate<'_>],
    k: usize,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let query = embed_query(embedder, query_text)?;
    let q = query.as_slice();
    let mut hits = Vec::with_capacity(candidates.len());
    for c in candidates {
        let v = embedder.embed(c.text)?;
        if v.dim() != query.dim() {
            return Err(RetrievalError::Dimension {
                query: query.dim(),
                pool: v.dim(),
            });
        }
        hits.push(RetrievalHit {
            id: c.id.to_string(),
            score: dot(q, v.as_slice()),
            source: c.source,
            recency: c.recency,
        });
    }
    hits.sort_by(rank_order);
    hits.truncate(k);
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashedProjectionEmbedder;
    use crate::featurepool::{FeaturePool, PoolEntry};

    fn pool_of(embedder: &HashedProjectionEmbedder, texts: &[&str]) -> PoolSnapshot {
        let mut pool = FeaturePool::new(embedder.dim());
        pool.append(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| PoolEntry {
                    id: format!("p{i}"),
                    recency: i as i64,
                    vector: embedder.embed(t).unwrap(),
                })
                .collect(),
        )
        .unwrap();
        pool.snapshot()
    }

    #[test]
    fn self_match_ranks_first() {
        let e = HashedProjectionEmbedder::default();
        let texts = ["graph neural networks", "protein folding", "language models", "reinforcement learning"];
        let pool = pool_of(&e, &texts);
        let q = e.embed("protein folding").unwrap();
        let hits = retrieve_topk(&q, &[(Source::Papers, &pool)], 2, None).unwrap();
        assert_eq!(hits[0].id, "p1");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
        assert!(hits[0].score >= hits[1].score);
    }

    #[test]
    fn k_is_clamped_and_validated() {
        let e = HashedProjectionEmbedder::default();
        let texts: Vec<String> = (0..7).map(|i| format!("document {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let pool = pool_of(&e, &refs);
        let q = e.embed("document").unwrap();
        assert_eq!(retrieve_topk(&q, &[(Source::Papers, &pool)], 100, None).unwrap().len(), 7);
        assert_eq!(retrieve_topk(&q, &[(Source::Papers, &pool)], 0, None), Err(RetrievalError::ZeroK));
        assert!(retrieve_topk(&q, &[], 3, None).unwrap().is_empty());
    }

    #[test]
    fn dimension_mismatch_errors() {
        let pool = pool_of(&HashedProjectionEmbedder::new(16, 1), &["a b c"]);
        let q = HashedProjectionEmbedder::new(8, 1).embed("a").unwrap();
        assert!(matches!(
            retrieve_topk(&q, &[(Source::Papers, &pool)], 1, None),
            Err(RetrievalError::Dimension { .. })
        ));
    }

    #[test]
    fn ties_prefer_newer_then_smaller_id() {
        let e = HashedProjectionEmbedder::new(16, 3);
        let v = e.embed("same text").unwrap();
        let mut pool = FeaturePool::new(16);
        pool.append(vec![
            PoolEntry { id: "b".into(), recency: 5, vector: v.clone() },
            PoolEntry { id: "a".into(), recency: 5, vector: v.clone() },
            PoolEntry { id: "c".into(), recency: 9, vector: v.clone() },
            PoolEntry { id: "d".into(), recency: 1, vector: v.clone() },
        ])
        .unwrap();
        let snap = pool.snapshot();
        let ids: Vec<_> = retrieve_topk(&v, &[(Source::Papers, &snap)], 3, None)
            .unwrap()
            .into_iter()
            .map(|h| h.id)
            .collect();
        assert_eq!(ids, vec!["c", "a", "b"]);
    }

    #[test]
    fn naive_matches_pooled() {
        let e = HashedProjectionEmbedder::default();
        let texts = ["sparse attention", "dense retrieval", "attention heads", "graph attention"];
        let pool = pool_of(&e, &texts);
        let ids: Vec<String> = (0..texts.len()).map(|i| format!("p{i}")).collect();
        let candidates: Vec<Candidate> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Candidate {
                source: Source::Papers,
                id: &ids[i],
                recency: i as i64,
                text: t,
            })
            .collect();
        let q = e.embed("attention").unwrap();
        let pooled = retrieve_topk(&q, &[(Source::Papers, &pool)], 3, None).unwrap();
        assert_eq!(retrieve_naive(&e, "attention", &candidates, 3).unwrap(), pooled);
    }

    #[test]
    fn empty_thought_pool_changes_nothing() {
        let e = HashedProjectionEmbedder::default();
        let papers = pool_of(&e, &["attention", "convolution", "recurrence"]);
        let thoughts = PoolSnapshot::empty(e.dim());
        let with = retrieve_chat_context(&e, "attention models", &papers, &thoughts, 2, true).unwrap();
        let without = retrieve_chat_context(&e, "attention models", &papers, &thoughts, 2, false).unwrap();
        assert_eq!(with, without);
        assert_eq!(
            retrieve_chat_context(&e, " ", &papers, &thoughts, 2, true),
            Err(RetrievalError::EmptyQuery)
        );
    }
}
