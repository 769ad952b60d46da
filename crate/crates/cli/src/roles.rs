//! Long-running roles: broker, gateway and worker processes.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use sweep_core::api::{self, ApiConfig, AppState};
use sweep_core::broker::{self, Broker, BrokerConfig};
use sweep_core::clock::system_clock;
use sweep_core::datasets::DatasetRepo;
use sweep_core::queue::RemoteQueue;
use sweep_core::store::ResultsStore;
use sweep_core::worker::{Worker, WorkerConfig, WorkerError};
use tokio::net::TcpListener;

use crate::config::Config;
use crate::CliError;

/// Resolves on Ctrl-C or SIGTERM.
async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutdown requested");
}

fn port_of(addr: &str) -> Option<u16> {
    addr.rsplit_once(':').and_then(|(_, p)| p.parse().ok())
}

async fn bind(host: &str, port: u16) -> Result<TcpListener, CliError> {
    TcpListener::bind((host, port))
        .await
        .map_err(|e| CliError::Transport(format!("cannot listen on {host}:{port}: {e}")))
}

fn io_err(what: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{what}: {e}"))
}

pub async fn broker(cfg: &Config, host: &str, port: Option<u16>) -> Result<(), CliError> {
    let port = port.or_else(|| port_of(&cfg.broker_addr)).unwrap_or(broker::DEFAULT_PORT);
    let path = cfg.journal_path();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(&dir.display().to_string(), e))?;
    }
    let config = BrokerConfig {
        lease_ttl: chrono::Duration::seconds(cfg.lease_ttl_s as i64),
        fsync: cfg.journal_fsync_mode,
        ..BrokerConfig::default()
    };
    let (b, recovery) = Broker::open(&path, config, system_clock())
        .map_err(|e| io_err(&path.display().to_string(), e))?;
    tracing::info!(
        journal = %path.display(),
        records = recovery.records,
        released_leases = recovery.released_leases,
        torn_tail = recovery.torn_tail,
        "journal replayed"
    );
    let b = Arc::new(b);
    let sweeper = broker::spawn_sweeper(&b, Duration::from_secs(1));
    let listener = bind(host, port).await?;
    tracing::info!(addr = %listener.local_addr().map(|a| a.to_string()).unwrap_or_default(), "broker listening");
    broker::server::serve(listener, b.clone(), shutdown_signal())
        .await
        .map_err(|e| CliError::Transport(e.to_string()))?;
    sweeper.abort();
    b.sync().map_err(|e| io_err("journal sync", e))?;
    Ok(())
}

pub async fn server(
    cfg: &Config,
    host: &str,
    port: Option<u16>,
    static_dir: Option<PathBuf>,
    cors: bool,
) -> Result<(), CliError> {
    let port = port.or_else(|| port_of(&cfg.api_addr)).unwrap_or(api::DEFAULT_PORT);
    let results = cfg.results_path();
    if let Some(dir) = results.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(&dir.display().to_string(), e))?;
    }
    let store = ResultsStore::open(&results).map_err(|e| io_err(&results.display().to_string(), e))?;
    let datasets = DatasetRepo::open(cfg.datasets_dir())
        .map_err(|e| io_err(&cfg.datasets_dir().display().to_string(), e))?;
    let state = AppState::new(
        Arc::new(store),
        Arc::new(datasets),
        Arc::new(RemoteQueue::new(cfg.broker_addr.clone(), "gateway")),
        system_clock(),
        ApiConfig {
            max_upload_bytes: cfg.max_upload_bytes,
            task_cap: cfg.task_cap,
            static_dir,
            cors,
            ..ApiConfig::default()
        },
    );
    let reaper = api::spawn_dead_letter_reaper(state.clone(), Duration::from_secs(2));
    let listener = bind(host, port).await?;
    tracing::info!(
        addr = %listener.local_addr().map(|a| a.to_string()).unwrap_or_default(),
        broker = %cfg.broker_addr,
        "gateway listening"
    );
    api::serve(listener, api::router(state.clone()), shutdown_signal())
        .await
        .map_err(|e| CliError::Transport(e.to_string()))?;
    reaper.abort();
    state.store.compact().map_err(|e| io_err("results compaction", e))?;
    Ok(())
}

pub async fn worker(cfg: &Config, slots: Option<usize>, name: Option<String>) -> Result<(), CliError> {
    let mut wc = WorkerConfig::new(cfg.broker_addr.clone(), cfg.api_addr.clone());
    if let Some(s) = slots {
        wc.slots = s;
    }
    if let Some(n) = name {
        wc.name = n;
    }
    wc.cache_dir = Some(cfg.worker_cache_dir());
    let worker = Worker::new(wc).map_err(|e| CliError::Usage(e.to_string()))?;
    worker.run(shutdown_signal()).await.map_err(|e| match e {
        WorkerError::BrokerUnreachable { .. } => CliError::Transport(e.to_string()),
        WorkerError::InvalidConfig(_) => CliError::Usage(e.to_string()),
    })
}
