//! Runtime configuration shared by the server and the CLI.

use std::net::SocketAddr;
use std::path::PathBuf;

use carevoice_core::language::LanguageTag;
use carevoice_core::providers::{ProviderConfig, ProviderError, Providers};
use carevoice_core::session::SessionPolicy;
use carevoice_core::store::{Store, StoreError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("data root {path}: {source}")]
    DataRoot { path: PathBuf, source: StoreError },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("invalid policy: {0}")]
    Policy(String),
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub listen: SocketAddr,
    pub data_root: PathBuf,
    pub providers: ProviderConfig,
    pub policy: SessionPolicy,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_root: PathBuf::from("carevoice-data"),
            providers: ProviderConfig::default(),
            policy: SessionPolicy::default(),
        }
    }
}

/// Optional overrides applied on top of [`SessionPolicy::default`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyOverrides {
    pub max_repeats: Option<u32>,
    pub chunk_seconds: Option<f64>,
    pub max_chunks: Option<u32>,
    pub silence_threshold: Option<f64>,
    pub noise_gate: Option<bool>,
    pub emotion_language: Option<LanguageTag>,
    pub speech_rate: Option<f64>,
}

impl PolicyOverrides {
    pub fn apply(&self, mut policy: SessionPolicy) -> Result<SessionPolicy, ConfigError> {
        if let Some(v) = self.max_repeats {
            policy.max_repeats = v;
        }
        if let Some(v) = self.chunk_seconds {
            policy.record.chunk_seconds = v;
        }
        if let Some(v) = self.max_chunks {
            policy.record.max_chunks = v;
        }
        if let Some(v) = self.silence_threshold {
            policy.record.silence_rms_threshold = v;
        }
        if let Some(v) = self.noise_gate {
            policy.record.noise_gate.enabled = v;
        }
        if let Some(v) = &self.emotion_language {
            policy.emotion_language = v.clone();
        }
        if let Some(v) = self.speech_rate {
            policy.speech_rate = v;
        }
        policy.validate().map_err(|e| ConfigError::Policy(e.to_string()))?;
        Ok(policy)
    }
}

impl GatewayConfig {
    /// Opens the store (creating and probing the data root) and builds the
    /// providers.
    pub fn open(&self) -> Result<(Store, Providers), ConfigError> {
        self.policy.validate().map_err(|e| ConfigError::Policy(e.to_string()))?;
        let store = Store::open(&self.data_root).map_err(|source| ConfigError::DataRoot {
            path: self.data_root.clone(),
            source,
        })?;
        Ok((store, self.providers.build()?))
    }
}
