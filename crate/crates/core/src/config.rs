//! TOML configuration shared by every CLI verb and the server.

use std::path::{Path, PathBuf};

use chrono::NaiveTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::DEFAULT_CAPACITY;
use crate::embed::DEFAULT_DIM;
use crate::retrieval::DEFAULT_K;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(String),
    #[error("config key `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

impl ConfigError {
    /// The offending key, when one can be named.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Live,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(ProviderKind::Mock),
            "live" => Ok(ProviderKind::Live),
            other => Err(format!("unknown provider {other:?} (expected mock or live)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    pub data_dir: PathBuf,
    pub provider: ProviderKind,
    pub embed_dim: usize,
    pub k: usize,
    pub cache_capacity: usize,
    /// "HH:MM" in UTC. No scheduled update when absent.
    pub daily_update_utc_time: Option<String>,
    /// OpenAI-compatible endpoint for the live provider and embedder.
    pub provider_url: String,
    pub provider_model: String,
    /// Remote embedding model; the local hashed embedder when absent.
    pub embed_model: Option<String>,
    /// Feed categories for the live paper feed.
    pub categories: Vec<String>,
    /// Save the response cache on shutdown and load it on start.
    pub persist_cache: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            provider: ProviderKind::Mock,
            embed_dim: DEFAULT_DIM,
            k: DEFAULT_K,
            cache_capacity: DEFAULT_CAPACITY,
            daily_update_utc_time: None,
            provider_url: "https://api.openai.com/v1".into(),
            provider_model: "gpt-4o-mini".into(),
            embed_model: None,
            categories: vec!["cs.CL".into(), "cs.LG".into(), "cs.AI".into()],
            persist_cache: false,
        }
    }
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let settings: Settings = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string().trim_end().to_string()))?;
        settings.validate()?;
        Ok(settings)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key, reason: &str| {
            Err(ConfigError::Invalid {
                key,
                reason: reason.to_string(),
            })
        };
        if self.embed_dim == 0 {
            return invalid("embed_dim", "must be at least 1");
        }
        if self.k == 0 {
            return invalid("k", "must be at least 1");
        }
        if self.cache_capacity == 0 {
            return invalid("cache_capacity", "must be at least 1");
        }
        if self.data_dir.as_os_str().is_empty() {
            return invalid("data_dir", "must not be empty");
        }
        self.update_time()?;
        Ok(())
    }

    pub fn update_time(&self) -> Result<Option<NaiveTime>, ConfigError> {
        self.daily_update_utc_time
            .as_deref()
            .map(|t| {
                NaiveTime::parse_from_str(t, "%H:%M").map_err(|_| ConfigError::Invalid {
                    key: "daily_update_utc_time",
                    reason: format!("{t:?} is not HH:MM"),
                })
            })
            .transpose()
    }
}
