//! The slice of broker functionality the gateway and orchestrator need,
//! behind a trait so they work against an in-process [`Broker`] or a remote
//! one over TCP.

use std::time::Duration;

use async_trait::async_trait;

use crate::broker::client::{BrokerClient, ClientError};
use crate::broker::{Broker, QueueStats};

#[derive(Debug, Clone, thiserror::Error)]
#[error("queue unavailable: {0}")]
pub struct QueueError(pub String);

/// A leased message as seen through [`TaskQueue`].
#[derive(Debug, Clone)]
pub struct Leased {
    pub message_id: String,
    pub payload: Vec<u8>,
    pub delivery_count: u32,
}

#[async_trait]
pub trait TaskQueue: Send + Sync {
    /// Enqueues under a caller-chosen id; repeating an id is a no-op.
    async fn enqueue(&self, queue: &str, payload: Vec<u8>, message_id: &str) -> Result<(), QueueError>;
    async fn lease(&self, queue: &str, max: usize) -> Result<Vec<Leased>, QueueError>;
    async fn ack(&self, message_id: &str) -> Result<(), QueueError>;
    async fn stats(&self, queue: &str) -> Result<QueueStats, QueueError>;
}

/// Consumer id used by an in-process queue handle.
const LOCAL_CONSUMER: &str = "gateway";

#[async_trait]
impl TaskQueue for Broker {
    async fn enqueue(&self, queue: &str, payload: Vec<u8>, message_id: &str) -> Result<(), QueueError> {
        Broker::enqueue(self, queue, payload, Some(message_id.to_string()))
            .map(|_| ())
            .map_err(|e| QueueError(e.to_string()))
    }

    async fn lease(&self, queue: &str, max: usize) -> Result<Vec<Leased>, QueueError> {
        Broker::lease(self, queue, LOCAL_CONSUMER, max)
            .map(|envs| {
                envs.into_iter()
                    .map(|e| Leased {
                        message_id: e.message_id,
                        payload: e.payload,
                        delivery_count: e.delivery_count,
                    })
                    .collect()
            })
            .map_err(|e| QueueError(e.to_string()))
    }

    async fn ack(&self, message_id: &str) -> Result<(), QueueError> {
        Broker::ack(self, message_id, LOCAL_CONSUMER)
            .map(|_| ())
            .map_err(|e| QueueError(e.to_string()))
    }

    async fn stats(&self, queue: &str) -> Result<QueueStats, QueueError> {
        Ok(Broker::stats(self, queue))
    }
}

/// A lazily (re)connected broker connection. A transport failure drops the
/// connection; the next call dials again.
pub struct RemoteQueue {
    addr: String,
    consumer: String,
    timeout: Duration,
    conn: tokio::sync::Mutex<Option<BrokerClient>>,
}

impl RemoteQueue {
    pub fn new(addr: impl Into<String>, consumer: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            consumer: consumer.into(),
            timeout: Duration::from_secs(10),
            conn: tokio::sync::Mutex::new(None),
        }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    async fn with_conn<T, F>(&self, f: F) -> Result<T, QueueError>
    where
        F: for<'c> FnOnce(
            &'c mut BrokerClient,
        ) -> std::pin::Pin<
            Box<dyn std::future::Future<Output = Result<T, ClientError>> + Send + 'c>,
        >,
    {
        let mut guard = self.conn.lock().await;
        if guard.is_none() {
            let client = tokio::time::timeout(self.timeout, BrokerClient::connect(&self.addr))
                .await
                .map_err(|_| QueueError(format!("connect to {} timed out", self.addr)))?
                .map_err(|e| QueueError(format!("cannot reach broker at {}: {e}", self.addr)))?;
            *guard = Some(client.with_consumer(self.consumer.clone()));
        }
        let client = guard.as_mut().expect("connected");
        match tokio::time::timeout(self.timeout, f(client)).await {
            Ok(Ok(v)) => Ok(v),
            Ok(Err(e)) => {
                if e.is_transport() {
                    *guard = None;
                }
                Err(QueueError(e.to_string()))
            }
            Err(_) => {
                *guard = None;
                Err(QueueError("broker request timed out".into()))
            }
        }
    }
}

#[async_trait]
impl TaskQueue for RemoteQueue {
    async fn enqueue(&self, queue: &str, payload: Vec<u8>, message_id: &str) -> Result<(), QueueError> {
        let queue = queue.to_string();
        let id = message_id.to_string();
        self.with_conn(move |c| Box::pin(async move { c.enqueue(&queue, &payload, Some(&id)).await.map(|_| ()) }))
            .await
    }

    async fn lease(&self, queue: &str, max: usize) -> Result<Vec<Leased>, QueueError> {
        let queue = queue.to_string();
        let envs = self
            .with_conn(move |c| Box::pin(async move { c.lease(&queue, max, Duration::ZERO).await }))
            .await?;
        envs.into_iter()
            .map(|e| {
                Ok(Leased {
                    payload: e.payload_bytes().map_err(|err| QueueError(err.to_string()))?,
                    message_id: e.message_id,
                    delivery_count: e.delivery_count,
                })
            })
            .collect()
    }

    async fn ack(&self, message_id: &str) -> Result<(), QueueError> {
        let id = message_id.to_string();
        self.with_conn(move |c| Box::pin(async move { c.ack(&id).await })).await
    }

    async fn stats(&self, queue: &str) -> Result<QueueStats, QueueError> {
        let queue = queue.to_string();
        self.with_conn(move |c| Box::pin(async move { c.stats(&queue).await }))
            .await
    }
}
