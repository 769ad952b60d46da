//! Core of the sweep platform: the network engine, CSV ingestion, the task
//! broker, grid orchestration, the results store, the REST gateway and the
//! worker runtime.
//!
//! Types that cross process boundaries are re-exported at the crate root.

pub mod api;
pub mod broker;
pub mod clock;
pub mod data;
pub mod datasets;
pub mod frame;
pub mod mlp;
pub mod queue;
pub mod store;
pub mod sweep;
pub mod worker;

pub use api::{ApiClient, ApiError};
pub use broker::{Envelope, QueueStats};
pub use data::Dataset;
pub use mlp::{Activation, MlpModel, TrainConfig};
pub use store::{ResultRecord, SeriesPoint, TaskStatus};
pub use sweep::{LayerWidth, Progress, SessionState, SweepSpec, TaskParams, TaskSpec};
pub use worker::WorkerStatus;
