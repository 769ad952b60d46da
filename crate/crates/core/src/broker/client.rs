//! Async client for the broker wire protocol.

use std::time::Duration;

use tokio::io::{BufReader, BufWriter};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpStream, ToSocketAddrs};

use super::protocol::{
    encode_payload, read_frame, write_frame, FrameError, Request, Response, WireEnvelope,
};
use super::QueueStats;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] std::io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    /// The broker answered with `ok: false`.
    #[error("{code}: {message}")]
    Broker { code: String, message: String },
}

impl ClientError {
    /// True when the connection is unusable and should be re-established.
    pub fn is_transport(&self) -> bool {
        matches!(self, ClientError::Transport(_) | ClientError::Protocol(_))
    }
}

impl From<FrameError> for ClientError {
    fn from(e: FrameError) -> Self {
        match e {
            FrameError::Io(io) => ClientError::Transport(io),
            other => ClientError::Protocol(other.to_string()),
        }
    }
}

/// One connection to the broker.
#[derive(Debug)]
pub struct BrokerClient {
    reader: BufReader<OwnedReadHalf>,
    writer: BufWriter<OwnedWriteHalf>,
    consumer: Option<String>,
}

impl BrokerClient {
    pub async fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true).ok();
        let (r, w) = stream.into_split();
        Ok(Self {
            reader: BufReader::new(r),
            writer: BufWriter::new(w),
            consumer: None,
        })
    }

    /// Uses a fixed consumer id for leases and acks instead of the
    /// per-connection default, so leases survive a reconnect.
    pub fn with_consumer(mut self, consumer: impl Into<String>) -> Self {
        self.consumer = Some(consumer.into());
        self
    }

    pub async fn call(&mut self, req: &Request) -> Result<Response, ClientError> {
        let body = serde_json::to_vec(req).map_err(|e| ClientError::Protocol(e.to_string()))?;
        write_frame(&mut self.writer, &body).await?;
        // Responses can carry up to `prefetch` payloads, so allow more than one frame's worth.
        let frame = read_frame(&mut self.reader, usize::MAX >> 1)
            .await?
            .ok_or_else(|| {
                ClientError::Transport(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "broker closed the connection",
                ))
            })?;
        let resp: Response =
            serde_json::from_slice(&frame).map_err(|e| ClientError::Protocol(e.to_string()))?;
        if resp.ok {
            Ok(resp)
        } else {
            Err(ClientError::Broker {
                code: resp.error.unwrap_or_else(|| "unknown".into()),
                message: resp.message.unwrap_or_default(),
            })
        }
    }

    pub async fn ping(&mut self) -> Result<(), ClientError> {
        self.call(&Request::Ping).await.map(|_| ())
    }

    pub async fn enqueue(
        &mut self,
        queue: &str,
        payload: &[u8],
        message_id: Option<&str>,
    ) -> Result<String, ClientError> {
        let resp = self
            .call(&Request::Enqueue {
                queue: queue.into(),
                payload: encode_payload(payload),
                message_id: message_id.map(str::to_string),
            })
            .await?;
        resp.message_id
            .ok_or_else(|| ClientError::Protocol("ENQUEUE response without message_id".into()))
    }

    pub async fn lease(
        &mut self,
        queue: &str,
        prefetch: usize,
        wait: Duration,
    ) -> Result<Vec<WireEnvelope>, ClientError> {
        let resp = self
            .call(&Request::Lease {
                queue: queue.into(),
                prefetch,
                wait_ms: wait.as_millis() as u64,
                consumer: self.consumer.clone(),
            })
            .await?;
        Ok(resp.messages.unwrap_or_default())
    }

    pub async fn ack(&mut self, message_id: &str) -> Result<(), ClientError> {
        self.call(&Request::Ack {
            message_id: message_id.into(),
            consumer: self.consumer.clone(),
        })
        .await
        .map(|_| ())
    }

    pub async fn nack(&mut self, message_id: &str) -> Result<(), ClientError> {
        self.call(&Request::Nack {
            message_id: message_id.into(),
            consumer: self.consumer.clone(),
        })
        .await
        .map(|_| ())
    }

    pub async fn stats(&mut self, queue: &str) -> Result<QueueStats, ClientError> {
        let resp = self.call(&Request::Stats { queue: queue.into() }).await?;
        resp.stats
            .ok_or_else(|| ClientError::Protocol("STATS response without stats".into()))
    }
}
