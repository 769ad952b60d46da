//! In-memory envelope bookkeeping. No I/O and no clock: callers pass `now`
//! and decide what to journal.

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::BrokerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeState {
    Ready,
    Leased,
    Acked,
}

/// A queued message as seen by consumers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub message_id: String,
    pub queue: String,
    pub payload: Vec<u8>,
    pub enqueued_at: DateTime<Utc>,
    pub state: EnvelopeState,
    pub lease_deadline: Option<DateTime<Utc>>,
    pub delivery_count: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueStats {
    pub ready_count: u64,
    pub leased_count: u64,
    pub acked_total: u64,
    pub redelivered_total: u64,
    pub consumers: u64,
}

/// What happened to a message returned to the broker without an ack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Requeue {
    Ready,
    DeadLettered { dead_queue: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AckOutcome {
    Acked,
    AlreadyAcked,
}

pub fn dead_letter_queue(queue: &str) -> String {
    format!("{queue}.dead")
}

fn is_dead_letter_queue(queue: &str) -> bool {
    queue.ends_with(".dead")
}

#[derive(Debug)]
struct Entry {
    env: Envelope,
    seq: u64,
    owner: Option<String>,
    acked_by: Option<String>,
}

#[derive(Debug, Default)]
struct QueueIndex {
    /// Ready messages ordered by original enqueue sequence.
    ready: BTreeMap<u64, String>,
    leased: HashSet<String>,
    acked_total: u64,
    redelivered_total: u64,
    enqueued_total: u64,
}

#[derive(Debug, Default)]
pub struct QueueSet {
    entries: HashMap<String, Entry>,
    queues: HashMap<String, QueueIndex>,
    next_seq: u64,
}

impl QueueSet {
    pub fn contains(&self, message_id: &str) -> bool {
        self.entries.contains_key(message_id)
    }

    pub fn envelope(&self, message_id: &str) -> Option<&Envelope> {
        self.entries.get(message_id).map(|e| &e.env)
    }

    pub fn enqueue(
        &mut self,
        queue: &str,
        message_id: String,
        payload: Vec<u8>,
        now: DateTime<Utc>,
    ) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let idx = self.queues.entry(queue.to_string()).or_default();
        idx.ready.insert(seq, message_id.clone());
        idx.enqueued_total += 1;
        self.entries.insert(
            message_id.clone(),
            Entry {
                env: Envelope {
                    message_id,
                    queue: queue.to_string(),
                    payload,
                    enqueued_at: now,
                    state: EnvelopeState::Ready,
                    lease_deadline: None,
                    delivery_count: 0,
                },
                seq,
                owner: None,
                acked_by: None,
            },
        );
    }

    /// Ids of the first `max` ready messages in FIFO order, without leasing them.
    pub fn peek_ready(&self, queue: &str, max: usize) -> Vec<String> {
        self.queues
            .get(queue)
            .map(|q| q.ready.values().take(max).cloned().collect())
            .unwrap_or_default()
    }

    /// Moves a ready message to leased. Returns the leased envelope.
    pub fn lease_one(
        &mut self,
        message_id: &str,
        consumer: &str,
        deadline: DateTime<Utc>,
    ) -> Option<Envelope> {
        let entry = self.entries.get_mut(message_id)?;
        if entry.env.state != EnvelopeState::Ready {
            return None;
        }
        let idx = self.queues.get_mut(&entry.env.queue)?;
        idx.ready.remove(&entry.seq);
        idx.leased.insert(message_id.to_string());
        entry.env.state = EnvelopeState::Leased;
        entry.env.lease_deadline = Some(deadline);
        entry.env.delivery_count += 1;
        if entry.env.delivery_count > 1 {
            idx.redelivered_total += 1;
        }
        entry.owner = Some(consumer.to_string());
        Some(entry.env.clone())
    }

    /// Checks that `consumer` may ack `message_id` without changing anything.
    pub fn check_ack(&self, message_id: &str, consumer: &str) -> Result<AckOutcome, BrokerError> {
        let stale = || BrokerError::StaleAck {
            message_id: message_id.to_string(),
        };
        let entry = self.entries.get(message_id).ok_or_else(stale)?;
        match entry.env.state {
            EnvelopeState::Leased if entry.owner.as_deref() == Some(consumer) => {
                Ok(AckOutcome::Acked)
            }
            EnvelopeState::Acked if entry.acked_by.as_deref() == Some(consumer) => {
                Ok(AckOutcome::AlreadyAcked)
            }
            _ => Err(stale()),
        }
    }

    /// Marks a leased message acked. `consumer` is recorded as the acker.
    pub fn ack(&mut self, message_id: &str, consumer: Option<&str>) -> bool {
        let Some(entry) = self.entries.get_mut(message_id) else {
            return false;
        };
        if entry.env.state != EnvelopeState::Leased {
            return false;
        }
        let idx = self.queues.get_mut(&entry.env.queue).expect("queue of entry");
        idx.leased.remove(message_id);
        idx.acked_total += 1;
        entry.env.state = EnvelopeState::Acked;
        entry.env.lease_deadline = None;
        entry.env.payload = Vec::new();
        entry.acked_by = consumer.map(str::to_string).or_else(|| entry.owner.take());
        entry.owner = None;
        true
    }

    pub fn check_nack(&self, message_id: &str, consumer: &str) -> Result<(), BrokerError> {
        match self.entries.get(message_id) {
            Some(e)
                if e.env.state == EnvelopeState::Leased && e.owner.as_deref() == Some(consumer) =>
            {
                Ok(())
            }
            _ => Err(BrokerError::StaleAck {
                message_id: message_id.to_string(),
            }),
        }
    }

    /// Returns a leased message to ready, or to the dead-letter queue once it
    /// has been delivered `max_deliveries` times.
    pub fn requeue(&mut self, message_id: &str, max_deliveries: u32) -> Option<Requeue> {
        let entry = self.entries.get_mut(message_id)?;
        if entry.env.state != EnvelopeState::Leased {
            return None;
        }
        let from = entry.env.queue.clone();
        self.queues.get_mut(&from)?.leased.remove(message_id);
        entry.env.state = EnvelopeState::Ready;
        entry.env.lease_deadline = None;
        entry.owner = None;

        let outcome = if entry.env.delivery_count >= max_deliveries && !is_dead_letter_queue(&from)
        {
            let dead = dead_letter_queue(&from);
            entry.env.queue = dead.clone();
            let idx = self.queues.entry(dead.clone()).or_default();
            idx.enqueued_total += 1;
            idx.ready.insert(entry.seq, message_id.to_string());
            Requeue::DeadLettered { dead_queue: dead }
        } else {
            self.queues
                .get_mut(&from)?
                .ready
                .insert(entry.seq, message_id.to_string());
            Requeue::Ready
        };
        Some(outcome)
    }

    /// Leased messages whose deadline is strictly before `now`.
    pub fn expired(&self, now: DateTime<Utc>) -> Vec<String> {
        let mut out: Vec<(u64, String)> = self
            .queues
            .values()
            .flat_map(|q| q.leased.iter())
            .filter_map(|id| {
                let e = &self.entries[id];
                matches!(e.env.lease_deadline, Some(d) if d < now).then(|| (e.seq, id.clone()))
            })
            .collect();
        out.sort_unstable();
        out.into_iter().map(|(_, id)| id).collect()
    }

    /// Every leased message back to ready without touching delivery counts.
    /// Used after replaying a journal, when the holders may be gone.
    pub fn release_all_leases(&mut self) -> usize {
        let leased: Vec<String> = self
            .queues
            .values()
            .flat_map(|q| q.leased.iter().cloned())
            .collect();
        for id in &leased {
            let entry = self.entries.get_mut(id).expect("leased entry");
            let idx = self.queues.get_mut(&entry.env.queue).expect("queue of entry");
            idx.leased.remove(id);
            idx.ready.insert(entry.seq, id.clone());
            entry.env.state = EnvelopeState::Ready;
            entry.env.lease_deadline = None;
            entry.owner = None;
        }
        leased.len()
    }

    pub fn stats(&self, queue: &str) -> QueueStats {
        self.queues
            .get(queue)
            .map(|q| QueueStats {
                ready_count: q.ready.len() as u64,
                leased_count: q.leased.len() as u64,
                acked_total: q.acked_total,
                redelivered_total: q.redelivered_total,
                consumers: 0,
            })
            .unwrap_or_default()
    }

    pub fn enqueued_total(&self, queue: &str) -> u64 {
        self.queues.get(queue).map_or(0, |q| q.enqueued_total)
    }

    /// Ready message ids of `queue` in delivery order.
    pub fn ready_ids(&self, queue: &str) -> Vec<String> {
        self.peek_ready(queue, usize::MAX)
    }

    pub fn queue_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.queues.keys().cloned().collect();
        names.sort();
        names
    }
}
