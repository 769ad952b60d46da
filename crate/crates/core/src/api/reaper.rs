//! Turns dead-lettered tasks into failed results so their sessions can finish.

use std::sync::Arc;
use std::time::Duration;

use super::AppState;
use crate::broker::{dead_letter_queue, TASK_QUEUE};
use crate::queue::Leased;
use crate::store::{ResultRecord, StoreError, TaskStatus};
use crate::sweep::TaskSpec;

pub const REAPER_NAME: &str = "dead-letter-reaper";

pub fn spawn_dead_letter_reaper(state: Arc<AppState>, interval: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let dead = dead_letter_queue(TASK_QUEUE);
        loop {
            match state.queue.lease(&dead, 64).await {
                Ok(batch) => {
                    let idle = batch.is_empty();
                    for msg in batch {
                        reap(&state, msg).await;
                    }
                    if !idle {
                        continue;
                    }
                }
                Err(e) => tracing::debug!(error = %e, "dead-letter reaper cannot reach the queue"),
            }
            tokio::time::sleep(interval).await;
        }
    })
}

async fn reap(state: &AppState, msg: Leased) {
    let task: TaskSpec = match serde_json::from_slice(&msg.payload) {
        Ok(t) => t,
        Err(e) => {
            tracing::warn!(message = %msg.message_id, error = %e, "dropping undecodable dead letter");
            let _ = state.queue.ack(&msg.message_id).await;
            return;
        }
    };
    // the reaper's own lease counts as one more delivery
    let attempts = msg.delivery_count.saturating_sub(1);
    let record = ResultRecord {
        task_id: task.task_id.clone(),
        session_id: task.session_id.clone(),
        status: TaskStatus::Failed,
        accuracy: None,
        train_seconds: None,
        loss_history: None,
        params: task.params(),
        worker_name: REAPER_NAME.to_string(),
        finished_at: state.clock.now(),
        error: Some(format!(
            "task dead-lettered after {attempts} deliveries without an acknowledged result"
        )),
    };
    match state.store.put_result(record) {
        Ok(_) | Err(StoreError::Validation { .. }) => {}
        Err(e) => {
            tracing::warn!(task = %task.task_id, error = %e, "cannot record dead-lettered task");
            return;
        }
    }
    tracing::warn!(task = %task.task_id, attempts, "task dead-lettered");
    if let Err(e) = state.queue.ack(&msg.message_id).await {
        tracing::warn!(task = %task.task_id, error = %e, "cannot ack dead letter");
    }
}
