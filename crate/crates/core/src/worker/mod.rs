//! Worker runtime: leases training tasks, runs them in parallel slots,
//! reports results to the gateway and acks them, and sends heartbeats.

mod cache;
mod execute;
mod runtime;

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cache::DatasetCache;
pub use execute::execute_task;
pub use runtime::{Worker, WorkerConfig, WorkerError};

/// A worker's self-reported state, as posted in heartbeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerStatus {
    pub worker_name: String,
    pub slots: usize,
    pub active: usize,
    pub processed: u64,
    pub failed: u64,
    pub succeeded: u64,
    pub last_heartbeat: DateTime<Utc>,
}

impl WorkerStatus {
    /// Checks the counter invariants; on failure names the offending field.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.worker_name.trim().is_empty() {
            return Err(("worker_name", "must not be empty".into()));
        }
        if self.slots == 0 {
            return Err(("slots", "must be positive".into()));
        }
        if self.active > self.slots {
            return Err((
                "active",
                format!("{} active tasks exceed {} slots", self.active, self.slots),
            ));
        }
        if self.succeeded.saturating_add(self.failed) > self.processed {
            return Err((
                "processed",
                format!(
                    "succeeded ({}) + failed ({}) exceeds processed ({})",
                    self.succeeded, self.failed, self.processed
                ),
            ));
        }
        Ok(())
    }
}

/// Live counters of a running worker.
#[derive(Debug)]
pub struct WorkerMetrics {
    pub(crate) active: AtomicUsize,
    pub(crate) peak_active: AtomicUsize,
    pub(crate) processed: AtomicU64,
    pub(crate) succeeded: AtomicU64,
    pub(crate) failed: AtomicU64,
    pub(crate) last_heartbeat: Mutex<DateTime<Utc>>,
}

impl WorkerMetrics {
    fn new() -> Self {
        Self {
            active: AtomicUsize::new(0),
            peak_active: AtomicUsize::new(0),
            processed: AtomicU64::new(0),
            succeeded: AtomicU64::new(0),
            failed: AtomicU64::new(0),
            last_heartbeat: Mutex::new(Utc::now()),
        }
    }

    pub fn active(&self) -> usize {
        self.active.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneously running tasks seen so far.
    pub fn peak_active(&self) -> usize {
        self.peak_active.load(Ordering::SeqCst)
    }

    pub fn processed(&self) -> u64 {
        self.processed.load(Ordering::SeqCst)
    }

    pub fn succeeded(&self) -> u64 {
        self.succeeded.load(Ordering::SeqCst)
    }

    pub fn failed(&self) -> u64 {
        self.failed.load(Ordering::SeqCst)
    }

    fn enter(&self) {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_active.fetch_max(now, Ordering::SeqCst);
    }

    fn leave(&self) {
        self.active.fetch_sub(1, Ordering::SeqCst);
    }

    fn record(&self, succeeded: bool) {
        // processed first; snapshots read the outcome counters first, so
        // they never see succeeded + failed above processed
        self.processed.fetch_add(1, Ordering::SeqCst);
        if succeeded {
            self.succeeded.fetch_add(1, Ordering::SeqCst);
        } else {
            self.failed.fetch_add(1, Ordering::SeqCst);
        }
    }
}

/// Exponential backoff with full jitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub base: Duration,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            cap: Duration::from_secs(60),
        }
    }
}

impl Backoff {
    /// Upper bound of the delay before retry number `attempt` (0-based).
    pub fn ceiling(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.min(31));
        self.base.saturating_mul(factor).min(self.cap)
    }

    pub fn delay(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        let ceiling = self.ceiling(attempt).as_millis() as u64;
        Duration::from_millis(rng.random_range(0..=ceiling))
    }
}

/// `host-pid-xxxxxxxx`: unique across processes on a host and across workers
/// within one process.
pub fn default_worker_name() -> String {
    let host = std::fs::read_to_string("/proc/sys/kernel/hostname")
        .ok()
        .or_else(|| std::env::var("HOSTNAME").ok())
        .map(|h| h.trim().to_string())
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| "worker".into());
    let tag: u32 = rand::rng().random();
    format!("{host}-{}-{tag:08x}", std::process::id())
}

pub fn default_slots() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
