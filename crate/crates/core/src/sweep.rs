//! Sweep sessions: grid expansion into concrete training tasks, submission
//! to the task queue, and progress derived from stored results.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::broker::TASK_QUEUE;
use crate::datasets::DatasetRepo;
use crate::mlp::{Activation, TrainConfig};
use crate::queue::{QueueError, TaskQueue};
use crate::store::{ResultsStore, StoreError};

/// Largest number of tasks one session may enqueue.
pub const DEFAULT_TASK_CAP: usize = 50_000;

/// Hidden-layer width: one width for every layer, or an explicit width per
/// layer position (a task with `n` hidden layers uses the first `n`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerWidth {
    Uniform(usize),
    Explicit(Vec<usize>),
}

/// A sweep over the Cartesian product of its axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub dataset_id: String,
    pub hidden_layer_counts: Vec<usize>,
    pub hidden_layer_width: LayerWidth,
    pub activations: Vec<Activation>,
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    /// Reserved; only `native` is accepted.
    #[serde(default = "default_engine")]
    pub engine: String,
}

fn default_engine() -> String {
    "native".into()
}

impl SweepSpec {
    /// Number of tasks the grid expands to, saturating on overflow.
    pub fn task_count(&self) -> u64 {
        [
            self.hidden_layer_counts.len(),
            self.activations.len(),
            self.learning_rates.len(),
            self.seeds.len(),
        ]
        .iter()
        .fold(1u64, |acc, &n| acc.saturating_mul(n as u64))
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |field: &'static str, message: &str| {
            Err(SweepError::Validation {
                field,
                message: message.to_string(),
            })
        };
        if self.dataset_id.is_empty() {
            return bad("dataset_id", "must not be empty");
        }
        if self.hidden_layer_counts.is_empty() {
            return bad("hidden_layer_counts", "must not be empty");
        }
        if self.activations.is_empty() {
            return bad("activations", "must not be empty");
        }
        if self.learning_rates.is_empty() {
            return bad("learning_rates", "must not be empty");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "must not be empty");
        }
        if self
            .learning_rates
            .iter()
            .any(|lr| !(lr.is_finite() && *lr > 0.0))
        {
            return bad("learning_rates", "every learning rate must be a positive number");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        match &self.hidden_layer_width {
            LayerWidth::Uniform(0) => return bad("hidden_layer_width", "must be positive"),
            LayerWidth::Uniform(_) => {}
            LayerWidth::Explicit(ws) => {
                if ws.contains(&0) {
                    return bad("hidden_layer_width", "every width must be positive");
                }
                let deepest = self.hidden_layer_counts.iter().max().copied().unwrap_or(0);
                if ws.len() < deepest {
                    return Err(SweepError::Validation {
                        field: "hidden_layer_width",
                        message: format!(
                            "{} explicit widths cannot cover {deepest} hidden layers",
                            ws.len()
                        ),
                    });
                }
            }
        }
        if self.engine != "native" {
            return Err(SweepError::Validation {
                field: "engine",
                message: format!("unsupported engine `{}`", self.engine),
            });
        }
        Ok(())
    }

    fn hidden_sizes(&self, count: usize) -> Vec<usize> {
        match &self.hidden_layer_width {
            LayerWidth::Uniform(w) => vec![*w; count],
            LayerWidth::Explicit(ws) => ws[..count].to_vec(),
        }
    }
}

/// Hyperparameters of one task, echoed into its result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// One fully specified training job; the payload of a queued message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub session_id: String,
    pub dataset_id: String,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn params(&self) -> TaskParams {
        TaskParams {
            hidden_sizes: self.hidden_sizes.clone(),
            activation: self.activation,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    /// `[n_features, hidden..., n_classes]`.
    pub fn layer_sizes(&self, n_features: usize, n_classes: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_sizes.len() + 2);
        sizes.push(n_features);
        sizes.extend(&self.hidden_sizes);
        sizes.push(n_classes);
        sizes
    }
}

/// Task id of the `index`-th task of a session.
pub fn task_id(session_id: &str, index: usize) -> String {
    format!("{session_id}-{index:05}")
}

/// Expands `spec` into tasks, iterating hidden-layer counts outermost, then
/// activations, learning rates, and seeds innermost. Task ids derive from
/// `session_id` and the position, so the result is a pure function of its
/// inputs.
pub fn expand_grid(spec: &SweepSpec, session_id: &str, cap: usize) -> Result<Vec<TaskSpec>, SweepError> {
    spec.validate()?;
    let count = spec.task_count();
    if count > cap as u64 {
        return Err(SweepError::TooManyTasks { count, cap });
    }
    let mut tasks = Vec::with_capacity(count as usize);
    for &layers in &spec.hidden_layer_counts {
        for &activation in &spec.activations {
            for &learning_rate in &spec.learning_rates {
                for &seed in &spec.seeds {
                    tasks.push(TaskSpec {
                        task_id: task_id(session_id, tasks.len()),
                        session_id: session_id.to_string(),
                        dataset_id: spec.dataset_id.clone(),
                        hidden_sizes: spec.hidden_sizes(layers),
                        activation,
                        learning_rate,
                        epochs: spec.epochs,
                        batch_size: spec.batch_size,
                        seed,
                    });
                }
            }
        }
    }
    Ok(tasks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Pending,
    Running,
    Done,
}

/// What is persisted about a session. Counters are derived, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub dataset_id: String,
    pub created_at: DateTime<Utc>,
    pub total_tasks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub completed: usize,
    pub failed: usize,
    pub fraction: f64,
    pub state: SessionState,
}

impl Progress {
    pub fn new(total: usize, completed: usize, failed: usize) -> Self {
        let finished = completed + failed;
        let fraction = if total == 0 {
            1.0
        } else {
            (finished as f64 / total as f64).min(1.0)
        };
        let state = if finished >= total {
            SessionState::Done
        } else if finished == 0 {
            SessionState::Pending
        } else {
            SessionState::Running
        };
        Self {
            total,
            completed,
            failed,
            fraction,
            state,
        }
    }
}

/// A session together with its current counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub dataset_id: String,
    pub created_at: DateTime<Utc>,
    pub total_tasks: usize,
    pub completed_tasks: usize,
    pub failed_tasks: usize,
    pub state: SessionState,
}

impl Session {
    pub fn from_parts(meta: SessionMeta, p: Progress) -> Self {
        Self {
            session_id: meta.session_id,
            dataset_id: meta.dataset_id,
            created_at: meta.created_at,
            total_tasks: meta.total_tasks,
            completed_tasks: p.completed,
            failed_tasks: p.failed,
            state: p.state,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("invalid `{field}`: {message}")]
    Validation { field: &'static str, message: String },
    #[error("grid expands to {count} tasks, above the cap of {cap}")]
    TooManyTasks { count: u64, cap: usize },
    #[error("{what} {id} not found")]
    NotFound { what: &'static str, id: String },
    #[error(transparent)]
    Unavailable(#[from] QueueError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Creates sessions: validates, enqueues every task, then persists.
pub struct Orchestrator {
    store: Arc<ResultsStore>,
    datasets: Arc<DatasetRepo>,
    queue: Arc<dyn TaskQueue>,
    task_cap: usize,
}

impl Orchestrator {
    pub fn new(
        store: Arc<ResultsStore>,
        datasets: Arc<DatasetRepo>,
        queue: Arc<dyn TaskQueue>,
        task_cap: usize,
    ) -> Self {
        Self {
            store,
            datasets,
            queue,
            task_cap,
        }
    }

    pub fn task_cap(&self) -> usize {
        self.task_cap
    }

    pub fn new_session_id() -> String {
        uuid::Uuid::new_v4().to_string()
    }

    /// Expands `spec` and submits it as a new session.
    pub async fn create_session(&self, spec: &SweepSpec) -> Result<Session, SweepError> {
        let session_id = Self::new_session_id();
        let tasks = expand_grid(spec, &session_id, self.task_cap)?;
        self.submit(&session_id, &spec.dataset_id, tasks).await
    }

    /// Enqueues `tasks` under `session_id` and persists the session once every
    /// task is on the queue. Enqueue is keyed by task id, so retrying a failed
    /// submission does not duplicate tasks.
    pub async fn submit(
        &self,
        session_id: &str,
        dataset_id: &str,
        tasks: Vec<TaskSpec>,
    ) -> Result<Session, SweepError> {
        if !self.datasets.exists(dataset_id) {
            return Err(SweepError::NotFound {
                what: "dataset",
                id: dataset_id.to_string(),
            });
        }
        if tasks.len() > self.task_cap {
            return Err(SweepError::TooManyTasks {
                count: tasks.len() as u64,
                cap: self.task_cap,
            });
        }
        if let Some(t) = tasks
            .iter()
            .find(|t| t.session_id != session_id || t.dataset_id != dataset_id)
        {
            return Err(SweepError::Validation {
                field: "task_id",
                message: format!("task {} belongs to another session or dataset", t.task_id),
            });
        }
        for task in &tasks {
            let payload = serde_json::to_vec(task).expect("task serializes");
            self.queue.enqueue(TASK_QUEUE, payload, &task.task_id).await?;
        }
        let meta = SessionMeta {
            session_id: session_id.to_string(),
            dataset_id: dataset_id.to_string(),
            created_at: Utc::now(),
            total_tasks: tasks.len(),
        };
        self.store.register_session(meta.clone())?;
        tracing::info!(session = session_id, tasks = tasks.len(), "session created");
        Ok(Session::from_parts(meta, Progress::new(tasks.len(), 0, 0)))
    }

    pub fn session(&self, session_id: &str) -> Result<Session, SweepError> {
        let meta = self.store.session(session_id).ok_or_else(|| SweepError::NotFound {
            what: "session",
            id: session_id.to_string(),
        })?;
        let progress = self.session_progress(session_id)?;
        Ok(Session::from_parts(meta, progress))
    }

    pub fn session_progress(&self, session_id: &str) -> Result<Progress, SweepError> {
        self.store.progress(session_id).ok_or_else(|| SweepError::NotFound {
            what: "session",
            id: session_id.to_string(),
        })
    }
}
