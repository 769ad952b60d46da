//! TCP front end for [`Broker`].

use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tokio::io::{BufReader, BufWriter};
use tokio::net::{TcpListener, TcpStream};

use super::protocol::{
    decode_payload, read_frame, write_frame, FrameError, Request, Response, WireEnvelope,
};
use super::{AckOutcome, Broker, BrokerError, Requeue};

/// Upper bound on a client-requested long-poll.
pub const MAX_WAIT: Duration = Duration::from_secs(30);

/// Accepts connections until `shutdown` resolves, then closes the open ones.
pub async fn serve(
    listener: TcpListener,
    broker: Arc<Broker>,
    shutdown: impl Future<Output = ()>,
) -> std::io::Result<()> {
    let conn_ids = Arc::new(AtomicU64::new(0));
    let (stop_tx, stop_rx) = tokio::sync::watch::channel(false);
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            _ = &mut shutdown => {
                let _ = stop_tx.send(true);
                return Ok(());
            }
            accepted = listener.accept() => {
                let (stream, peer) = match accepted {
                    Ok(a) => a,
                    Err(e) => {
                        tracing::warn!(error = %e, "accept failed");
                        continue;
                    }
                };
                let id = conn_ids.fetch_add(1, Ordering::Relaxed);
                let broker = broker.clone();
                let mut stop = stop_rx.clone();
                tokio::spawn(async move {
                    tokio::select! {
                        res = handle_connection(stream, peer, id, broker) => {
                            if let Err(e) = res {
                                tracing::debug!(%peer, error = %e, "connection closed with error");
                            }
                        }
                        _ = stop.wait_for(|s| *s) => {}
                    }
                });
            }
        }
    }
}

struct ConnectionGuard(Arc<Broker>);

impl Drop for ConnectionGuard {
    fn drop(&mut self) {
        self.0.connection_closed();
    }
}

async fn handle_connection(
    stream: TcpStream,
    peer: SocketAddr,
    conn_id: u64,
    broker: Arc<Broker>,
) -> Result<(), FrameError> {
    stream.set_nodelay(true).ok();
    broker.connection_opened();
    let _guard = ConnectionGuard(broker.clone());
    let default_consumer = format!("{peer}#{conn_id}");
    let (read, write) = stream.into_split();
    let mut reader = BufReader::new(read);
    let mut writer = BufWriter::new(write);
    // JSON and base64 overhead on top of the payload limit.
    let max_frame = broker.config().max_frame_bytes * 4 / 3 + 4096;

    loop {
        let frame = match read_frame(&mut reader, max_frame).await {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(FrameError::TooLarge(n)) => {
                let resp = Response::error(
                    "frame_too_large",
                    format!("frame of {n} bytes exceeds limit"),
                );
                write_frame(&mut writer, &serde_json::to_vec(&resp).unwrap()).await?;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let resp = match serde_json::from_slice::<Request>(&frame) {
            Ok(req) => dispatch(&broker, req, &default_consumer).await,
            Err(e) => Response::error("bad_request", e.to_string()),
        };
        write_frame(&mut writer, &serde_json::to_vec(&resp).unwrap()).await?;
    }
}

fn from_error(e: BrokerError) -> Response {
    Response::error(e.code(), e.to_string())
}

pub(crate) async fn dispatch(broker: &Broker, req: Request, default_consumer: &str) -> Response {
    match req {
        Request::Ping => Response::ok(),
        Request::Enqueue {
            queue,
            payload,
            message_id,
        } => {
            let bytes = match decode_payload(&payload) {
                Ok(b) => b,
                Err(e) => return Response::error("bad_request", format!("payload: {e}")),
            };
            match broker.enqueue(&queue, bytes, message_id) {
                Ok(id) => Response {
                    message_id: Some(id),
                    ..Response::ok()
                },
                Err(e) => from_error(e),
            }
        }
        Request::Lease {
            queue,
            prefetch,
            wait_ms,
            consumer,
        } => {
            let consumer = consumer.unwrap_or_else(|| default_consumer.to_string());
            let wait = Duration::from_millis(wait_ms).min(MAX_WAIT);
            let result = if wait.is_zero() {
                broker.lease(&queue, &consumer, prefetch)
            } else {
                broker.lease_wait(&queue, &consumer, prefetch, wait).await
            };
            match result {
                Ok(envs) => Response {
                    messages: Some(envs.into_iter().map(WireEnvelope::from).collect()),
                    ..Response::ok()
                },
                Err(e) => from_error(e),
            }
        }
        Request::Ack {
            message_id,
            consumer,
        } => {
            let consumer = consumer.unwrap_or_else(|| default_consumer.to_string());
            match broker.ack(&message_id, &consumer) {
                Ok(outcome) => Response {
                    message_id: Some(message_id),
                    outcome: Some(
                        match outcome {
                            AckOutcome::Acked => "acked",
                            AckOutcome::AlreadyAcked => "already_acked",
                        }
                        .into(),
                    ),
                    ..Response::ok()
                },
                Err(e) => from_error(e),
            }
        }
        Request::Nack {
            message_id,
            consumer,
        } => {
            let consumer = consumer.unwrap_or_else(|| default_consumer.to_string());
            match broker.nack(&message_id, &consumer) {
                Ok(r) => Response {
                    message_id: Some(message_id),
                    outcome: Some(
                        match r {
                            Requeue::Ready => "ready",
                            Requeue::DeadLettered { .. } => "dead_lettered",
                        }
                        .into(),
                    ),
                    ..Response::ok()
                },
                Err(e) => from_error(e),
            }
        }
        Request::Stats { queue } => Response {
            stats: Some(broker.stats(&queue)),
            ..Response::ok()
        },
    }
}
