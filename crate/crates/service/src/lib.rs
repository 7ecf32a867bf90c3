//! HTTP API, CLI and assistant router over the discovery engine.

pub mod api;
pub mod assistant;
pub mod cli;
pub mod error;
pub mod process;
pub mod state;

pub use api::router;
pub use error::ApiError;
pub use state::{AppState, Settings};
