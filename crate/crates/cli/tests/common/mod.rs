//! Broker, gateway and workers running inside the test process, plus helpers
//! for driving the `sweep` binary against them.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use sweep_core::api::{self, ApiClient, ApiConfig, AppState};
use sweep_core::broker::{self, Broker, BrokerConfig};
use sweep_core::clock::{system_clock, SharedClock};
use sweep_core::datasets::DatasetRepo;
use sweep_core::queue::RemoteQueue;
use sweep_core::store::ResultsStore;
use sweep_core::sweep::SessionState;
use sweep_core::worker::{Backoff, Worker, WorkerConfig, WorkerError, WorkerMetrics};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

pub struct Stack {
    pub broker: Arc<Broker>,
    pub broker_addr: String,
    pub api_addr: String,
    pub state: Arc<AppState>,
    stops: Vec<oneshot::Sender<()>>,
}

impl Stack {
    pub async fn start() -> Self {
        let clock: SharedClock = system_clock();
        let broker = Arc::new(Broker::in_memory(BrokerConfig::default(), clock.clone()));
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let broker_addr = listener.local_addr().unwrap().to_string();
        let (btx, brx) = oneshot::channel::<()>();
        tokio::spawn(broker::server::serve(listener, broker.clone(), async {
            let _ = brx.await;
        }));

        let state = AppState::new(
            Arc::new(ResultsStore::in_memory()),
            Arc::new(DatasetRepo::in_memory()),
            Arc::new(RemoteQueue::new(broker_addr.clone(), "gateway")),
            clock,
            ApiConfig::default(),
        );
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let api_addr = listener.local_addr().unwrap().to_string();
        let (atx, arx) = oneshot::channel::<()>();
        tokio::spawn(api::serve(listener, api::router(state.clone()), async {
            let _ = arx.await;
        }));
        Self {
            broker,
            broker_addr,
            api_addr,
            state,
            stops: vec![btx, atx],
        }
    }

    pub fn client(&self) -> ApiClient {
        ApiClient::new(&self.api_addr)
    }

    pub fn worker_config(&self, name: &str, slots: usize) -> WorkerConfig {
        let mut c = WorkerConfig::new(self.broker_addr.clone(), self.api_addr.clone());
        c.name = name.into();
        c.slots = slots;
        c.lease_wait = Duration::from_millis(100);
        c.heartbeat_interval = Duration::from_millis(500);
        c.backoff = Backoff {
            base: Duration::from_millis(20),
            cap: Duration::from_millis(200),
        };
        c
    }

    pub fn spawn_worker(&self, name: &str, slots: usize) -> RunningWorker {
        let worker = Arc::new(Worker::new(self.worker_config(name, slots)).unwrap());
        let metrics = worker.metrics();
        let (tx, rx) = oneshot::channel::<()>();
        let handle = tokio::spawn(async move {
            worker
                .run(async {
                    let _ = rx.await;
                })
                .await
        });
        RunningWorker {
            stop: Some(tx),
            handle,
            metrics,
        }
    }

    /// Polls the store until `session` is done or `timeout` passes.
    pub async fn wait_done(&self, session: &str, timeout: Duration) -> bool {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            if self
                .state
                .store
                .progress(session)
                .is_some_and(|p| p.state == SessionState::Done)
            {
                return true;
            }
            if tokio::time::Instant::now() >= deadline {
                return false;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
    }
}

impl Drop for Stack {
    fn drop(&mut self) {
        for tx in self.stops.drain(..) {
            let _ = tx.send(());
        }
    }
}

pub struct RunningWorker {
    stop: Option<oneshot::Sender<()>>,
    pub handle: tokio::task::JoinHandle<Result<(), WorkerError>>,
    pub metrics: Arc<WorkerMetrics>,
}

impl RunningWorker {
    pub fn is_running(&self) -> bool {
        !self.handle.is_finished()
    }

    pub async fn stop(mut self) -> Result<(), WorkerError> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        self.handle.await.expect("worker task panicked")
    }
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the `sweep` binary with `args`, isolated from any SWEEP_* settings
/// in the surrounding environment.
pub async fn sweep(args: &[&str]) -> Output {
    let mut cmd = tokio::process::Command::new(env!("CARGO_BIN_EXE_sweep"));
    cmd.args(args).env("SWEEP_LOG", "warn");
    for (k, _) in std::env::vars() {
        if k.starts_with("SWEEP_") && k != "SWEEP_LOG" {
            cmd.env_remove(k);
        }
    }
    let out = cmd.output().await.expect("spawn sweep binary");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn grid_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("grids").join(name)
}

/// Writes the bundled dataset to a file inside `dir`.
pub fn bundled_csv_file(dir: &std::path::Path) -> PathBuf {
    let path = dir.join("blobs.csv");
    std::fs::write(&path, sweep_core::data::synthetic::BUNDLED_CSV).unwrap();
    path
}

/// Pulls `key=value` lines out of `submit` output.
pub fn field<'a>(stdout: &'a str, key: &str) -> Option<&'a str> {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}
