//! In-process broker + gateway for integration tests.
#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use sweep_core::api::{self, ApiClient, ApiConfig, AppState};
use sweep_core::broker::{self, Broker, BrokerConfig};
use sweep_core::clock::{ManualClock, SharedClock};
use sweep_core::datasets::DatasetRepo;
use sweep_core::queue::RemoteQueue;
use sweep_core::store::ResultsStore;
use sweep_core::worker::{Backoff, WorkerConfig};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

pub struct Stack {
    pub broker: Arc<Broker>,
    pub broker_addr: String,
    pub api_addr: String,
    pub state: Arc<AppState>,
    pub clock: ManualClock,
    broker_stop: Option<oneshot::Sender<()>>,
    api_stop: Option<oneshot::Sender<()>>,
}

pub async fn start_broker(broker: Arc<Broker>, listener: TcpListener) -> oneshot::Sender<()> {
    let (tx, rx) = oneshot::channel::<()>();
    tokio::spawn(broker::server::serve(listener, broker, async {
        let _ = rx.await;
    }));
    tx
}

impl Stack {
    pub async fn start() -> Self {
        Self::with_config(ApiConfig::default()).await
    }

    pub async fn with_config(config: ApiConfig) -> Self {
        let clock = ManualClock::default();
        let shared: SharedClock = Arc::new(clock.clone());
        let broker = Arc::new(Broker::in_memory(BrokerConfig::default(), shared.clone()));
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let broker_addr = listener.local_addr().unwrap().to_string();
        let broker_stop = start_broker(broker.clone(), listener).await;

        let state = AppState::new(
            Arc::new(ResultsStore::in_memory()),
            Arc::new(DatasetRepo::in_memory()),
            Arc::new(RemoteQueue::new(broker_addr.clone(), "gateway")),
            shared,
            config,
        );
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let api_addr = listener.local_addr().unwrap().to_string();
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(api::serve(listener, api::router(state.clone()), async {
            let _ = rx.await;
        }));
        Self {
            broker,
            broker_addr,
            api_addr,
            state,
            clock,
            broker_stop: Some(broker_stop),
            api_stop: Some(tx),
        }
    }

    pub fn client(&self) -> ApiClient {
        ApiClient::new(&self.api_addr)
    }

    pub fn stop_broker(&mut self) {
        if let Some(tx) = self.broker_stop.take() {
            let _ = tx.send(());
        }
    }

    pub async fn restart_broker(&mut self) {
        self.stop_broker();
        let listener = TcpListener::bind(&self.broker_addr).await.unwrap();
        self.broker_stop = Some(start_broker(self.broker.clone(), listener).await);
    }

    pub fn worker_config(&self, name: &str, slots: usize) -> WorkerConfig {
        let mut c = WorkerConfig::new(self.broker_addr.clone(), self.api_addr.clone());
        c.name = name.into();
        c.slots = slots;
        c.lease_wait = Duration::from_millis(100);
        c.heartbeat_interval = Duration::from_millis(200);
        c.backoff = Backoff {
            base: Duration::from_millis(20),
            cap: Duration::from_millis(200),
        };
        c
    }
}

impl Drop for Stack {
    fn drop(&mut self) {
        self.stop_broker();
        if let Some(tx) = self.api_stop.take() {
            let _ = tx.send(());
        }
    }
}

/// Polls `cond` every 20 ms until it holds or `timeout` passes.
pub async fn eventually<F: FnMut() -> bool>(timeout: Duration, mut cond: F) -> bool {
    let deadline = tokio::time::Instant::now() + timeout;
    while tokio::time::Instant::now() < deadline {
        if cond() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    cond()
}
