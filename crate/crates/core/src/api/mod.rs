//! REST gateway: dataset upload, session creation and progress, results,
//! worker heartbeats and queue statistics, plus the HTTP client used by
//! workers and the command line.

pub mod client;
mod reaper;
mod server;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::worker::WorkerStatus;

pub use client::{ApiClient, ApiClientError};
pub use reaper::spawn_dead_letter_reaper;
pub use server::{router, serve, ApiConfig, AppState};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 512 * 1024 * 1024;

/// Error body returned by every failing endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub http_status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ApiError {
    pub fn new(http_status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            http_status,
            code: code.to_string(),
            message: message.into(),
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl ToString) -> Self {
        self.detail = Some(detail.to_string());
        self
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(404, "not_found", format!("{what} {id} not found"))
    }

    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        Self::new(400, "validation", message).with_detail(field)
    }

    pub fn unavailable(message: impl Into<String>) -> Self {
        Self::new(503, "unavailable", message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset_id: String,
    pub n_rows: usize,
    pub n_features: usize,
    pub class_names: Vec<String>,
    pub train_size: usize,
    pub test_size: usize,
}

impl DatasetSummary {
    pub fn of(ds: &Dataset) -> Self {
        Self {
            dataset_id: ds.dataset_id.clone(),
            n_rows: ds.n_rows(),
            n_features: ds.n_features(),
            class_names: ds.class_names.clone(),
            train_size: ds.train_indices.len(),
            test_size: ds.test_indices.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub task_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PutOutcomeBody {
    Stored,
    DuplicateIgnored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultPosted {
    pub outcome: PutOutcomeBody,
}

/// A worker as listed by `GET /api/workers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerView {
    #[serde(flatten)]
    pub status: WorkerStatus,
    pub online: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueStatsView {
    pub queue: String,
    #[serde(flatten)]
    pub stats: crate::broker::QueueStats,
    pub dead_lettered: u64,
}
