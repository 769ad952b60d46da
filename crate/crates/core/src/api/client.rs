//! Blocking-free HTTP client for the gateway, used by workers and the CLI.

use std::time::Duration;

use reqwest::{Method, RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    ApiError, DatasetSummary, QueueStatsView, ResultPosted, SessionCreated, WorkerView,
};
use crate::data::Dataset;
use crate::store::{Reducer, ResultRecord, SeriesPoint, XField, YField};
use crate::sweep::{Progress, SweepSpec};
use crate::worker::WorkerStatus;

#[derive(Debug, thiserror::Error)]
pub enum ApiClientError {
    #[error("cannot reach API at {addr}: {message}")]
    Transport { addr: String, message: String },
    #[error(transparent)]
    Api(#[from] ApiError),
}

impl ApiClientError {
    pub fn api(&self) -> Option<&ApiError> {
        match self {
            ApiClientError::Api(e) => Some(e),
            ApiClientError::Transport { .. } => None,
        }
    }

    /// True for 4xx responses: retrying the same request cannot succeed.
    pub fn is_rejection(&self) -> bool {
        self.api().is_some_and(|e| (400..500).contains(&e.http_status))
    }
}

/// Query parameters of `GET /api/sessions/{id}/results`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ResultsParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sort: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_max: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ApiClient {
    base: String,
    http: reqwest::Client,
}

fn json_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

impl ApiClient {
    /// `addr` is `host:port` or a full `http://` URL.
    pub fn new(addr: &str) -> Self {
        let base = if addr.starts_with("http://") || addr.starts_with("https://") {
            addr.trim_end_matches('/').to_string()
        } else {
            format!("http://{addr}")
        };
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("http client builds");
        Self { base, http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{path}", self.base))
    }

    async fn send(&self, req: RequestBuilder) -> Result<reqwest::Response, ApiClientError> {
        let resp = req.send().await.map_err(|e| ApiClientError::Transport {
            addr: self.base.clone(),
            message: e.to_string(),
        })?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let body = resp.bytes().await.unwrap_or_default();
        Err(match serde_json::from_slice::<ApiError>(&body) {
            Ok(err) => err.into(),
            Err(_) => ApiError::new(
                status.as_u16(),
                if status == StatusCode::NOT_FOUND {
                    "not_found"
                } else {
                    "unavailable"
                },
                String::from_utf8_lossy(&body).into_owned(),
            )
            .into(),
        })
    }

    async fn json<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, ApiClientError> {
        let resp = self.send(req).await?;
        resp.json().await.map_err(|e| ApiClientError::Transport {
            addr: self.base.clone(),
            message: format!("malformed response: {e}"),
        })
    }

    pub async fn upload_dataset(
        &self,
        csv: Vec<u8>,
        label: &str,
        seed: Option<u64>,
    ) -> Result<DatasetSummary, ApiClientError> {
        let mut query = vec![("label", label.to_string())];
        if let Some(s) = seed {
            query.push(("seed", s.to_string()));
        }
        self.json(
            self.request(Method::POST, "/api/datasets")
                .query(&query)
                .header("content-type", "text/csv")
                .body(csv),
        )
        .await
    }

    /// Raw JSON body of a stored dataset.
    pub async fn dataset_bytes(&self, dataset_id: &str) -> Result<Vec<u8>, ApiClientError> {
        let resp = self
            .send(self.request(Method::GET, &format!("/api/datasets/{dataset_id}")))
            .await?;
        resp.bytes()
            .await
            .map(|b| b.to_vec())
            .map_err(|e| ApiClientError::Transport {
                addr: self.base.clone(),
                message: e.to_string(),
            })
    }

    pub async fn dataset(&self, dataset_id: &str) -> Result<Dataset, ApiClientError> {
        self.json(self.request(Method::GET, &format!("/api/datasets/{dataset_id}")))
            .await
    }

    pub async fn create_session(&self, spec: &SweepSpec) -> Result<SessionCreated, ApiClientError> {
        self.json(self.request(Method::POST, "/api/sessions").json(spec))
            .await
    }

    pub async fn session(&self, session_id: &str) -> Result<Progress, ApiClientError> {
        self.json(self.request(Method::GET, &format!("/api/sessions/{session_id}")))
            .await
    }

    pub async fn results(
        &self,
        session_id: &str,
        params: &ResultsParams,
    ) -> Result<Vec<ResultRecord>, ApiClientError> {
        self.json(
            self.request(Method::GET, &format!("/api/sessions/{session_id}/results"))
                .query(params),
        )
        .await
    }

    pub async fn aggregate(
        &self,
        session_id: &str,
        x: XField,
        y: YField,
        reduce: Reducer,
    ) -> Result<Vec<SeriesPoint>, ApiClientError> {
        self.json(
            self.request(Method::GET, &format!("/api/sessions/{session_id}/aggregate"))
                .query(&[("x", json_name(&x)), ("y", json_name(&y)), ("reduce", json_name(&reduce))]),
        )
        .await
    }

    pub async fn post_result(&self, record: &ResultRecord) -> Result<ResultPosted, ApiClientError> {
        self.json(self.request(Method::POST, "/api/results").json(record))
            .await
    }

    pub async fn heartbeat(&self, status: &WorkerStatus) -> Result<WorkerView, ApiClientError> {
        self.json(self.request(Method::POST, "/api/workers/heartbeat").json(status))
            .await
    }

    pub async fn workers(&self) -> Result<Vec<WorkerView>, ApiClientError> {
        self.json(self.request(Method::GET, "/api/workers")).await
    }

    pub async fn queue_stats(&self) -> Result<QueueStatsView, ApiClientError> {
        self.json(self.request(Method::GET, "/api/queue/stats")).await
    }
}
