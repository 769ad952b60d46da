use std::collections::VecDeque;
use std::future::Future;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokio::sync::{mpsc, Semaphore};
use tokio::task::JoinSet;

use super::{default_slots, default_worker_name, execute_task, Backoff, DatasetCache, WorkerMetrics, WorkerStatus};
use crate::api::ApiClient;
use crate::broker::client::{BrokerClient, ClientError};
use crate::broker::protocol::WireEnvelope;
use crate::broker::TASK_QUEUE;
use crate::store::{ResultRecord, TaskStatus};
use crate::sweep::TaskSpec;

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub broker_addr: String,
    pub api_addr: String,
    pub slots: usize,
    pub name: String,
    /// Long-poll duration of each lease request.
    pub lease_wait: Duration,
    pub heartbeat_interval: Duration,
    pub backoff: Backoff,
    pub cache_dir: Option<PathBuf>,
}

impl WorkerConfig {
    pub fn new(broker_addr: impl Into<String>, api_addr: impl Into<String>) -> Self {
        Self {
            broker_addr: broker_addr.into(),
            api_addr: api_addr.into(),
            slots: default_slots(),
            name: default_worker_name(),
            lease_wait: Duration::from_millis(500),
            heartbeat_interval: Duration::from_secs(10),
            backoff: Backoff::default(),
            cache_dir: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkerError {
    #[error("cannot reach broker at {addr}: {message}")]
    BrokerUnreachable { addr: String, message: String },
    #[error("invalid worker configuration: {0}")]
    InvalidConfig(String),
}

struct Shared {
    config: WorkerConfig,
    metrics: Arc<WorkerMetrics>,
    api: ApiClient,
    cache: DatasetCache,
    stopping: AtomicBool,
}

impl Shared {
    fn status(&self) -> WorkerStatus {
        let m = &self.metrics;
        let (succeeded, failed) = (m.succeeded(), m.failed());
        WorkerStatus {
            worker_name: self.config.name.clone(),
            slots: self.config.slots,
            active: m.active(),
            processed: m.processed(),
            failed,
            succeeded,
            last_heartbeat: *m.last_heartbeat.lock(),
        }
    }

    fn stopping(&self) -> bool {
        self.stopping.load(Ordering::SeqCst)
    }
}

/// A worker process's main loop. One control loop owns the broker
/// connection and acks; each leased task runs in its own slot.
pub struct Worker {
    shared: Arc<Shared>,
}

impl Worker {
    pub fn new(config: WorkerConfig) -> Result<Self, WorkerError> {
        if config.slots == 0 {
            return Err(WorkerError::InvalidConfig("slots must be positive".into()));
        }
        if config.name.trim().is_empty() {
            return Err(WorkerError::InvalidConfig("name must not be empty".into()));
        }
        let cache = match &config.cache_dir {
            Some(d) => DatasetCache::on_disk(d),
            None => DatasetCache::in_memory(),
        };
        Ok(Self {
            shared: Arc::new(Shared {
                api: ApiClient::new(&config.api_addr),
                metrics: Arc::new(WorkerMetrics::new()),
                cache,
                config,
                stopping: AtomicBool::new(false),
            }),
        })
    }

    pub fn name(&self) -> &str {
        &self.shared.config.name
    }

    pub fn metrics(&self) -> Arc<WorkerMetrics> {
        self.shared.metrics.clone()
    }

    pub fn status(&self) -> WorkerStatus {
        self.shared.status()
    }

    async fn connect(&self) -> Result<BrokerClient, ClientError> {
        let c = &self.shared.config;
        let client = tokio::time::timeout(Duration::from_secs(10), BrokerClient::connect(&c.broker_addr))
            .await
            .map_err(|_| ClientError::Transport(std::io::Error::from(std::io::ErrorKind::TimedOut)))??;
        Ok(client.with_consumer(c.name.clone()))
    }

    /// Runs until `shutdown` resolves, then finishes the tasks in flight.
    /// Only an unreachable broker at startup is an error; later failures are
    /// retried.
    pub async fn run(&self, shutdown: impl Future<Output = ()>) -> Result<(), WorkerError> {
        let cfg = self.shared.config.clone();
        let mut conn = Some(self.connect().await.map_err(|e| WorkerError::BrokerUnreachable {
            addr: cfg.broker_addr.clone(),
            message: e.to_string(),
        })?);
        tracing::info!(worker = %cfg.name, slots = cfg.slots, broker = %cfg.broker_addr, "worker started");

        let heartbeat = tokio::spawn(heartbeat_loop(self.shared.clone()));
        let slots = Arc::new(Semaphore::new(cfg.slots));
        let (done_tx, mut done_rx) = mpsc::unbounded_channel::<String>();
        let mut acks: VecDeque<String> = VecDeque::new();
        let mut running = JoinSet::new();
        let mut rng = ChaCha8Rng::from_os_rng();
        let mut failures = 0u32;
        tokio::pin!(shutdown);

        loop {
            while let Ok(id) = done_rx.try_recv() {
                acks.push_back(id);
            }
            while running.try_join_next().is_some() {}

            if conn.is_none() {
                let delay = cfg.backoff.delay(failures, &mut rng);
                tokio::select! {
                    _ = &mut shutdown => break,
                    _ = tokio::time::sleep(delay) => {}
                }
                match self.connect().await {
                    Ok(c) => {
                        tracing::info!(broker = %cfg.broker_addr, "reconnected to broker");
                        conn = Some(c);
                        failures = 0;
                    }
                    Err(e) => {
                        failures = failures.saturating_add(1);
                        tracing::warn!(broker = %cfg.broker_addr, error = %e, "broker unreachable, retrying");
                        continue;
                    }
                }
            }
            let client = conn.as_mut().expect("connected");
            if flush_acks(client, &mut acks).await.is_err() {
                conn = None;
                continue;
            }

            let first = tokio::select! {
                _ = &mut shutdown => break,
                Some(id) = done_rx.recv() => {
                    acks.push_back(id);
                    continue;
                }
                p = slots.clone().acquire_owned() => p.expect("semaphore open"),
            };
            let mut permits = vec![first];
            while let Ok(p) = slots.clone().try_acquire_owned() {
                permits.push(p);
            }

            match client.lease(TASK_QUEUE, permits.len(), cfg.lease_wait).await {
                Ok(batch) => {
                    failures = 0;
                    for env in batch {
                        let permit = permits.pop().expect("prefetch bounded by free slots");
                        let shared = self.shared.clone();
                        let done = done_tx.clone();
                        running.spawn(async move {
                            let _permit = permit;
                            if let Some(id) = run_slot(&shared, env).await {
                                let _ = done.send(id);
                            }
                        });
                    }
                }
                Err(e) if e.is_transport() => {
                    tracing::warn!(error = %e, "lost broker connection");
                    conn = None;
                }
                Err(e) => {
                    tracing::warn!(error = %e, "lease rejected");
                    let delay = cfg.backoff.delay(failures, &mut rng);
                    failures = failures.saturating_add(1);
                    tokio::time::sleep(delay).await;
                }
            }
        }

        self.shared.stopping.store(true, Ordering::SeqCst);
        tracing::info!(worker = %cfg.name, in_flight = running.len(), "worker stopping");
        while running.join_next().await.is_some() {}
        while let Ok(id) = done_rx.try_recv() {
            acks.push_back(id);
        }
        if !acks.is_empty() {
            if conn.is_none() {
                conn = self.connect().await.ok();
            }
            if let Some(c) = conn.as_mut() {
                let _ = flush_acks(c, &mut acks).await;
            }
            if !acks.is_empty() {
                tracing::warn!(unacked = acks.len(), "exiting with unacked results; they will be redelivered");
            }
        }
        heartbeat.abort();
        let _ = self.shared.api.heartbeat(&self.shared.status()).await;
        Ok(())
    }
}

/// Acks queued message ids in order. A transport failure keeps the rest for
/// the next connection; a broker refusal (lease already expired) drops the id.
async fn flush_acks(client: &mut BrokerClient, acks: &mut VecDeque<String>) -> Result<(), ClientError> {
    while let Some(id) = acks.front() {
        match client.ack(id).await {
            Ok(()) => {}
            Err(e) if e.is_transport() => return Err(e),
            Err(e) => tracing::warn!(message = %id, error = %e, "ack refused"),
        }
        acks.pop_front();
    }
    Ok(())
}

async fn heartbeat_loop(shared: Arc<Shared>) {
    loop {
        *shared.metrics.last_heartbeat.lock() = Utc::now();
        if let Err(e) = shared.api.heartbeat(&shared.status()).await {
            tracing::debug!(error = %e, "heartbeat failed");
        }
        tokio::time::sleep(shared.config.heartbeat_interval).await;
    }
}

/// Retries `op` with backoff until it succeeds, is rejected outright, or the
/// worker is stopping and `give_up_when_stopping` holds.
async fn with_retry<T, F, Fut>(shared: &Shared, what: &str, mut op: F) -> Option<Result<T, crate::api::ApiClientError>>
where
    F: FnMut() -> Fut,
    Fut: Future<Output = Result<T, crate::api::ApiClientError>>,
{
    let mut rng = ChaCha8Rng::from_os_rng();
    let mut attempt = 0u32;
    loop {
        match op().await {
            Ok(v) => return Some(Ok(v)),
            Err(e) if e.is_rejection() => return Some(Err(e)),
            Err(e) => {
                if shared.stopping() && attempt >= 3 {
                    tracing::warn!(error = %e, "giving up on {what} during shutdown");
                    return None;
                }
                tracing::warn!(error = %e, attempt, "{what} failed, retrying");
                tokio::time::sleep(shared.config.backoff.delay(attempt, &mut rng)).await;
                attempt = attempt.saturating_add(1);
            }
        }
    }
}

fn failed_record(task: &TaskSpec, worker: &str, error: String) -> ResultRecord {
    ResultRecord {
        task_id: task.task_id.clone(),
        session_id: task.session_id.clone(),
        status: TaskStatus::Failed,
        accuracy: None,
        train_seconds: None,
        loss_history: None,
        params: task.params(),
        worker_name: worker.to_string(),
        finished_at: Utc::now(),
        error: Some(error),
    }
}

/// Executes one leased task and reports it. Returns the message id to ack,
/// or `None` when the result could not be delivered (the lease then expires
/// and the task is redelivered).
async fn run_slot(shared: &Arc<Shared>, env: WireEnvelope) -> Option<String> {
    let metrics = &shared.metrics;
    metrics.enter();
    let outcome = execute_leased(shared, &env).await;
    metrics.leave();
    match outcome {
        Some(succeeded) => {
            metrics.record(succeeded);
            Some(env.message_id)
        }
        None => None,
    }
}

async fn execute_leased(shared: &Arc<Shared>, env: &WireEnvelope) -> Option<bool> {
    let name = &shared.config.name;
    let task: TaskSpec = match env
        .payload_bytes()
        .map_err(|e| e.to_string())
        .and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string()))
    {
        Ok(t) => t,
        Err(e) => {
            tracing::error!(message = %env.message_id, error = %e, "discarding undecodable task");
            return Some(false);
        }
    };

    let dataset = with_retry(shared, "dataset fetch", || shared.cache.get(&shared.api, &task.dataset_id)).await?;
    let record = match dataset {
        Ok(ds) => {
            let t = task.clone();
            let worker = name.clone();
            match tokio::task::spawn_blocking(move || execute_task(&t, &ds, &worker)).await {
                Ok(r) => r,
                Err(e) => failed_record(&task, name, format!("training slot aborted: {e}")),
            }
        }
        Err(e) => failed_record(&task, name, format!("dataset {} unavailable: {e}", task.dataset_id)),
    };
    match &record.error {
        Some(err) => tracing::info!(task = %task.task_id, error = %err, "task failed"),
        None => tracing::debug!(task = %task.task_id, accuracy = ?record.accuracy, "task succeeded"),
    }
    let succeeded = record.status == TaskStatus::Succeeded;
    match with_retry(shared, "result post", || shared.api.post_result(&record)).await? {
        Ok(_) => {}
        Err(e) => tracing::warn!(task = %task.task_id, error = %e, "result rejected by the gateway"),
    }
    Some(succeeded)
}
