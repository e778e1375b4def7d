//! Wires configuration into a running engine, gateway, cache and service.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use crate::cache::ResponseCache;
use crate::clock::Clock;
use crate::config::{ProviderKind, Settings};
use crate::embed::{Embedder, HashedProjectionEmbedder, RemoteEmbedder, DEFAULT_SEED};
use crate::engine::{Engine, EngineConfig, EngineError};
use crate::feed::PaperFeed;
use crate::llm::{CompletionProvider, GatewayConfig, LiveProvider, LlmGateway, MockProvider};
use crate::services::{Copilot, CopilotConfig, ServiceError, Toggles};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("the live provider needs PROVIDER_API_KEY")]
    MissingApiKey,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

/// Everything a server or CLI verb needs, built from [`Settings`].
pub struct Runtime {
    pub settings: Settings,
    pub engine: Arc<Engine>,
    pub gateway: Arc<LlmGateway>,
    pub cache: Arc<ResponseCache>,
    pub copilot: Arc<Copilot>,
    /// Present when the mock provider is in use, for call counting.
    pub mock: Option<Arc<MockProvider>>,
}

pub struct RuntimeOptions {
    pub feed: Arc<dyn PaperFeed>,
    pub clock: Arc<dyn Clock>,
    pub api_key: Option<String>,
    pub toggles: Toggles,
    /// Keep everything in memory and ignore `data_dir`.
    pub ephemeral: bool,
    pub start_scheduler: bool,
}

impl Runtime {
    pub fn build(settings: Settings, opts: RuntimeOptions) -> Result<Runtime, RuntimeError> {
        let embedder: Arc<dyn Embedder> = match (&settings.embed_model, settings.provider) {
            (Some(model), ProviderKind::Live) => Arc::new(RemoteEmbedder::new(
                &settings.provider_url,
                model,
                opts.api_key.clone(),
                settings.embed_dim,
            )),
            _ => Arc::new(HashedProjectionEmbedder::new(settings.embed_dim, DEFAULT_SEED)),
        };
        let (provider, mock): (Arc<dyn CompletionProvider>, _) = match settings.provider {
            ProviderKind::Mock => {
                let mock = Arc::new(MockProvider::new());
                (mock.clone(), Some(mock))
            }
            ProviderKind::Live => {
                let key = opts.api_key.clone().ok_or(RuntimeError::MissingApiKey)?;
                (
                    Arc::new(LiveProvider::new(
                        &settings.provider_url,
                        &settings.provider_model,
                        key,
                        Duration::from_secs(120),
                    )),
                    None,
                )
            }
        };
        let data_dir = (!opts.ephemeral).then(|| settings.data_dir.clone());
        let cache = Arc::new(ResponseCache::new(settings.cache_capacity));
        if let Some(dir) = data_dir.as_ref().filter(|_| settings.persist_cache) {
            if let Err(e) = cache.load(&cache_path(dir)) {
                tracing::warn!(error = %e, "could not load saved cache");
            }
        }
        let engine = Engine::start(
            EngineConfig {
                data_dir: data_dir.clone(),
                daily_update_utc_time: if opts.start_scheduler {
                    settings.update_time().ok().flatten()
                } else {
                    None
                },
                ..Default::default()
            },
            embedder,
            opts.feed,
            Some(cache.clone()),
            opts.clock.clone(),
        )?;
        let gateway = Arc::new(LlmGateway::new(provider, GatewayConfig::default()));
        let copilot = Arc::new(Copilot::new(
            engine.clone(),
            gateway.clone(),
            cache.clone(),
            opts.clock,
            CopilotConfig {
                k: settings.k,
                toggles: opts.toggles,
                outbox: data_dir.as_ref().map(|d| d.join("outbox")),
                data_dir,
            },
        )?);
        Ok(Runtime {
            settings,
            engine,
            gateway,
            cache,
            copilot,
            mock,
        })
    }

    /// Drains pending thought writes and saves the cache if configured.
    pub fn shutdown(&self) {
        self.engine.shutdown();
        if self.settings.persist_cache && self.copilot.config().data_dir.is_some() {
            if let Err(e) = self.cache.save(&cache_path(&self.settings.data_dir)) {
                tracing::warn!(error = %e, "could not save cache");
            }
        }
    }
}

fn cache_path(dir: &std::path::Path) -> PathBuf {
    dir.join("cache.jsonl")
}
