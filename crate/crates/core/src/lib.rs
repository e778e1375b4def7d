//! Core of a retrieval-augmented research assistant: paper corpus, embedding
//! pools, thought memory, LLM gateway, response cache, serving engine and the
//! personalized pipelines built on top of them.

pub mod bench;
pub mod cache;
pub mod clock;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod engine;
pub mod featurepool;
pub mod feed;
pub mod llm;
pub mod persist;
pub mod retrieval;
pub mod runtime;
pub mod services;
pub mod text;
pub mod thoughtstore;
