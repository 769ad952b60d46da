//! Append-only broker journal.
//!
//! Every record is framed by [`crate::frame`] and holds one JSON document:
//!
//! ```json
//! {"op":"ENQ","message_id":"…","queue":"tasks","payload":"<base64>","timestamp":"…"}
//! ```
//!
//! `op` is one of `ENQ`, `LEASE`, `ACK`, `NACK`; `payload` appears on `ENQ`
//! only. Lease expiry is journaled as `NACK`.

use std::io;
use std::path::Path;

use base64::Engine;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::state::QueueSet;
use crate::frame::FramedLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JournalOp {
    Enq,
    Lease,
    Ack,
    Nack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub op: JournalOp,
    pub message_id: String,
    pub queue: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consumer: Option<String>,
}

impl JournalRecord {
    pub fn enq(queue: &str, message_id: &str, payload: &[u8], at: DateTime<Utc>) -> Self {
        Self {
            op: JournalOp::Enq,
            message_id: message_id.into(),
            queue: queue.into(),
            payload: Some(base64::engine::general_purpose::STANDARD.encode(payload)),
            timestamp: at,
            consumer: None,
        }
    }

    pub fn op(op: JournalOp, queue: &str, message_id: &str, consumer: &str, at: DateTime<Utc>) -> Self {
        Self {
            op,
            message_id: message_id.into(),
            queue: queue.into(),
            payload: None,
            timestamp: at,
            consumer: Some(consumer.into()),
        }
    }
}

/// When the journal forces data to stable storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FsyncMode {
    /// fsync after every `ENQ` and `ACK` record.
    #[default]
    Always,
    /// fsync once every [`BATCH_SYNC_EVERY`] records.
    Batched,
}

pub const BATCH_SYNC_EVERY: usize = 256;

impl std::str::FromStr for FsyncMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "always" => Ok(FsyncMode::Always),
            "batched" => Ok(FsyncMode::Batched),
            other => Err(format!("unknown fsync mode `{other}` (expected always|batched)")),
        }
    }
}

#[derive(Debug)]
pub struct Journal {
    log: FramedLog,
    fsync: FsyncMode,
    unsynced: usize,
}

/// Outcome of replaying a journal file.
#[derive(Debug, Default)]
pub struct Recovery {
    pub records: usize,
    pub torn_tail: bool,
    pub released_leases: usize,
    pub skipped: usize,
}

impl Journal {
    /// Opens the journal and replays it into a fresh [`QueueSet`].
    ///
    /// Acked messages stay acked, ready messages stay ready in their original
    /// enqueue order, and messages that were leased at the time of the crash
    /// go back to ready with their delivery count intact.
    pub fn open(
        path: &Path,
        fsync: FsyncMode,
        max_deliveries: u32,
    ) -> io::Result<(Self, QueueSet, Recovery)> {
        let (log, scan) = FramedLog::open(path)?;
        let mut state = QueueSet::default();
        let mut recovery = Recovery {
            torn_tail: scan.torn,
            ..Default::default()
        };
        for raw in &scan.records {
            let rec: JournalRecord = match serde_json::from_slice(raw) {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!(error = %e, "skipping undecodable journal record");
                    recovery.skipped += 1;
                    continue;
                }
            };
            if !replay(&mut state, &rec, max_deliveries) {
                recovery.skipped += 1;
            }
            recovery.records += 1;
        }
        recovery.released_leases = state.release_all_leases();
        Ok((
            Self {
                log,
                fsync,
                unsynced: 0,
            },
            state,
            recovery,
        ))
    }

    pub fn append(&mut self, rec: &JournalRecord) -> io::Result<()> {
        let bytes = serde_json::to_vec(rec).map_err(io::Error::other)?;
        self.log.append(&bytes)?;
        self.unsynced += 1;
        let durable_op = matches!(rec.op, JournalOp::Enq | JournalOp::Ack);
        match self.fsync {
            FsyncMode::Always if durable_op => self.sync(),
            FsyncMode::Batched if self.unsynced >= BATCH_SYNC_EVERY => self.sync(),
            _ => Ok(()),
        }
    }

    pub fn sync(&mut self) -> io::Result<()> {
        self.log.sync()?;
        self.unsynced = 0;
        Ok(())
    }
}

fn replay(state: &mut QueueSet, rec: &JournalRecord, max_deliveries: u32) -> bool {
    match rec.op {
        JournalOp::Enq => {
            if state.contains(&rec.message_id) {
                return false;
            }
            let payload = rec
                .payload
                .as_deref()
                .map(|p| base64::engine::general_purpose::STANDARD.decode(p))
                .transpose();
            match payload {
                Ok(p) => {
                    state.enqueue(&rec.queue, rec.message_id.clone(), p.unwrap_or_default(), rec.timestamp);
                    true
                }
                Err(_) => false,
            }
        }
        JournalOp::Lease => state
            .lease_one(
                &rec.message_id,
                rec.consumer.as_deref().unwrap_or(""),
                rec.timestamp,
            )
            .is_some(),
        JournalOp::Ack => state.ack(&rec.message_id, rec.consumer.as_deref()),
        JournalOp::Nack => state.requeue(&rec.message_id, max_deliveries).is_some(),
    }
}
