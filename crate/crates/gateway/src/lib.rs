//! REST service and CLI drivers for the carevoice engine.

pub mod api;
pub mod commands;
pub mod config;
pub mod results;

pub use api::{router, AppState};
pub use config::{ConfigError, GatewayConfig, PolicyOverrides};
pub use results::ResultsDocument;
