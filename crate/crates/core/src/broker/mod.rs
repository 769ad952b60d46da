//! Durable FIFO broker with consumer leases and at-least-once delivery.
//!
//! [`Broker`] owns all queues behind one lock, so each state transition is
//! applied atomically and envelope invariants hold without finer locking.
//! Mutations are written to the journal before they are applied; an enqueue
//! returns only after its record is durable (in [`FsyncMode::Always`]).

pub mod client;
mod journal;
pub mod protocol;
pub mod server;
mod state;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use tokio::sync::Notify;

pub use journal::{FsyncMode, JournalOp, JournalRecord, Recovery};
pub use state::{dead_letter_queue, AckOutcome, Envelope, EnvelopeState, QueueStats, Requeue};

use crate::clock::SharedClock;
use journal::Journal;
use state::QueueSet;

/// Name of the queue that carries training tasks.
pub const TASK_QUEUE: &str = "tasks";

pub const DEFAULT_PORT: u16 = 6380;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BrokerError {
    #[error("frame of {size} bytes exceeds the {max} byte limit")]
    FrameTooLarge { size: usize, max: usize },
    #[error("broker unavailable: {0}")]
    Unavailable(String),
    #[error("no live lease on message {message_id} for this consumer")]
    StaleAck { message_id: String },
    #[error("prefetch must be at least 1")]
    InvalidPrefetch,
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl BrokerError {
    /// Wire error code.
    pub fn code(&self) -> &'static str {
        match self {
            BrokerError::FrameTooLarge { .. } => "frame_too_large",
            BrokerError::Unavailable(_) => "unavailable",
            BrokerError::StaleAck { .. } => "stale_ack",
            BrokerError::InvalidPrefetch => "invalid_prefetch",
            BrokerError::BadRequest(_) => "bad_request",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub lease_ttl: Duration,
    pub max_deliveries: u32,
    pub max_frame_bytes: usize,
    pub fsync: FsyncMode,
}

pub const DEFAULT_MAX_FRAME_BYTES: usize = 16 * 1024 * 1024;

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            lease_ttl: Duration::seconds(600),
            max_deliveries: 5,
            max_frame_bytes: DEFAULT_MAX_FRAME_BYTES,
            fsync: FsyncMode::Always,
        }
    }
}

#[derive(Debug)]
struct Inner {
    queues: QueueSet,
    journal: Option<Journal>,
}

impl Inner {
    fn log(&mut self, rec: &JournalRecord) -> Result<(), BrokerError> {
        if let Some(j) = self.journal.as_mut() {
            j.append(rec)
                .map_err(|e| BrokerError::Unavailable(format!("journal write failed: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct Broker {
    inner: Mutex<Inner>,
    config: BrokerConfig,
    clock: SharedClock,
    ready_signal: Notify,
    consumers: AtomicU64,
}

impl Broker {
    /// A broker without a journal. State is lost on drop.
    pub fn in_memory(config: BrokerConfig, clock: SharedClock) -> Self {
        Self::with_parts(config, clock, QueueSet::default(), None)
    }

    /// Opens (or creates) the journal at `path` and recovers its state.
    pub fn open(
        path: &Path,
        config: BrokerConfig,
        clock: SharedClock,
    ) -> std::io::Result<(Self, Recovery)> {
        let (journal, queues, recovery) = Journal::open(path, config.fsync, config.max_deliveries)?;
        if recovery.torn_tail {
            tracing::warn!(path = %path.display(), "journal had a torn tail; truncated to last valid record");
        }
        tracing::info!(
            records = recovery.records,
            released = recovery.released_leases,
            "broker journal replayed"
        );
        Ok((Self::with_parts(config, clock, queues, Some(journal)), recovery))
    }

    fn with_parts(
        config: BrokerConfig,
        clock: SharedClock,
        queues: QueueSet,
        journal: Option<Journal>,
    ) -> Self {
        Self {
            inner: Mutex::new(Inner { queues, journal }),
            config,
            clock,
            ready_signal: Notify::new(),
            consumers: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    /// Appends a message. When `message_id` names a message the broker already
    /// knows, nothing is written and that id is returned.
    pub fn enqueue(
        &self,
        queue: &str,
        payload: Vec<u8>,
        message_id: Option<String>,
    ) -> Result<String, BrokerError> {
        if payload.len() > self.config.max_frame_bytes {
            return Err(BrokerError::FrameTooLarge {
                size: payload.len(),
                max: self.config.max_frame_bytes,
            });
        }
        if queue.is_empty() {
            return Err(BrokerError::BadRequest("queue name is empty".into()));
        }
        let id = message_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        let now = self.clock.now();
        {
            let mut inner = self.inner.lock();
            if inner.queues.contains(&id) {
                return Ok(id);
            }
            inner.log(&JournalRecord::enq(queue, &id, &payload, now))?;
            inner.queues.enqueue(queue, id.clone(), payload, now);
        }
        self.ready_signal.notify_waiters();
        Ok(id)
    }

    /// Leases up to `max_messages` ready messages in FIFO order. Never blocks.
    pub fn lease(
        &self,
        queue: &str,
        consumer: &str,
        max_messages: usize,
    ) -> Result<Vec<Envelope>, BrokerError> {
        if max_messages == 0 {
            return Err(BrokerError::InvalidPrefetch);
        }
        let now = self.clock.now();
        let deadline = now + self.config.lease_ttl;
        let mut inner = self.inner.lock();
        let ids = inner.queues.peek_ready(queue, max_messages);
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            inner.log(&JournalRecord::op(JournalOp::Lease, queue, &id, consumer, now))?;
            out.push(
                inner
                    .queues
                    .lease_one(&id, consumer, deadline)
                    .expect("peeked message is ready"),
            );
        }
        Ok(out)
    }

    /// Like [`Broker::lease`], but waits up to `wait` for a message to arrive
    /// when the queue is empty.
    pub async fn lease_wait(
        &self,
        queue: &str,
        consumer: &str,
        max_messages: usize,
        wait: StdDuration,
    ) -> Result<Vec<Envelope>, BrokerError> {
        let deadline = tokio::time::Instant::now() + wait;
        loop {
            let signal = self.ready_signal.notified();
            let got = self.lease(queue, consumer, max_messages)?;
            if !got.is_empty() {
                return Ok(got);
            }
            if tokio::time::timeout_at(deadline, signal).await.is_err() {
                return Ok(Vec::new());
            }
        }
    }

    pub fn ack(&self, message_id: &str, consumer: &str) -> Result<AckOutcome, BrokerError> {
        let now = self.clock.now();
        let mut inner = self.inner.lock();
        let outcome = inner.queues.check_ack(message_id, consumer)?;
        if outcome == AckOutcome::Acked {
            let queue = inner.queues.envelope(message_id).expect("checked").queue.clone();
            inner.log(&JournalRecord::op(JournalOp::Ack, &queue, message_id, consumer, now))?;
            inner.queues.ack(message_id, Some(consumer));
        }
        Ok(outcome)
    }

    /// Returns a leased message to ready immediately, keeping its delivery
    /// count; past `max_deliveries` it moves to `<queue>.dead`.
    pub fn nack(&self, message_id: &str, consumer: &str) -> Result<Requeue, BrokerError> {
        let now = self.clock.now();
        let outcome = {
            let mut inner = self.inner.lock();
            inner.queues.check_nack(message_id, consumer)?;
            let queue = inner.queues.envelope(message_id).expect("checked").queue.clone();
            inner.log(&JournalRecord::op(JournalOp::Nack, &queue, message_id, consumer, now))?;
            inner
                .queues
                .requeue(message_id, self.config.max_deliveries)
                .expect("checked lease")
        };
        self.ready_signal.notify_waiters();
        Ok(outcome)
    }

    /// Returns every lease with a deadline before `now` to ready (or the
    /// dead-letter queue). Returns how many messages moved.
    pub fn sweep_expired(&self, now: DateTime<Utc>) -> Result<usize, BrokerError> {
        let moved = {
            let mut inner = self.inner.lock();
            let expired = inner.queues.expired(now);
            for id in &expired {
                let queue = inner.queues.envelope(id).expect("expired").queue.clone();
                inner.log(&JournalRecord::op(JournalOp::Nack, &queue, id, "lease-expiry", now))?;
                inner.queues.requeue(id, self.config.max_deliveries);
            }
            expired.len()
        };
        if moved > 0 {
            tracing::debug!(moved, "expired leases returned");
            self.ready_signal.notify_waiters();
        }
        Ok(moved)
    }

    pub fn stats(&self, queue: &str) -> QueueStats {
        let mut stats = self.inner.lock().queues.stats(queue);
        stats.consumers = self.consumers.load(Ordering::Relaxed);
        stats
    }

    /// Messages ever enqueued into `queue` (dead-letter queues count
    /// messages routed into them).
    pub fn enqueued_total(&self, queue: &str) -> u64 {
        self.inner.lock().queues.enqueued_total(queue)
    }

    /// Ready message ids in delivery order.
    pub fn ready_ids(&self, queue: &str) -> Vec<String> {
        self.inner.lock().queues.ready_ids(queue)
    }

    pub fn envelope(&self, message_id: &str) -> Option<Envelope> {
        self.inner.lock().queues.envelope(message_id).cloned()
    }

    pub fn queue_names(&self) -> Vec<String> {
        self.inner.lock().queues.queue_names()
    }

    /// Forces buffered journal records to disk.
    pub fn sync(&self) -> Result<(), BrokerError> {
        if let Some(j) = self.inner.lock().journal.as_mut() {
            j.sync()
                .map_err(|e| BrokerError::Unavailable(format!("journal sync failed: {e}")))?;
        }
        Ok(())
    }

    pub(crate) fn connection_opened(&self) {
        self.consumers.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn connection_closed(&self) {
        self.consumers.fetch_sub(1, Ordering::Relaxed);
    }
}

/// Calls [`Broker::sweep_expired`] every `interval` until the broker is dropped.
pub fn spawn_sweeper(broker: &Arc<Broker>, interval: StdDuration) -> tokio::task::JoinHandle<()> {
    let weak = Arc::downgrade(broker);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(interval);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tick.tick().await;
            let Some(broker) = weak.upgrade() else { break };
            if let Err(e) = broker.sweep_expired(broker.now()) {
                tracing::error!(error = %e, "lease sweep failed");
            }
        }
    })
}
