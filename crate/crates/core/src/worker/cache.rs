//! Per-worker dataset cache: fetched once from the gateway, kept in memory
//! and, when a directory is configured, on disk as `{id}.{sha256}.json`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::api::{ApiClient, ApiClientError};
use crate::data::Dataset;

#[derive(Debug, Default)]
pub struct DatasetCache {
    dir: Option<PathBuf>,
    loaded: tokio::sync::Mutex<HashMap<String, Arc<Dataset>>>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn parse(bytes: &[u8]) -> Option<Dataset> {
    serde_json::from_slice(bytes).ok()
}

/// A cached file whose name matches `id` and whose content matches the hash
/// in its name.
fn load_from_disk(dir: &Path, id: &str) -> Option<Dataset> {
    let prefix = format!("{id}.");
    for entry in std::fs::read_dir(dir).ok()?.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(hash) = name
            .strip_prefix(&prefix)
            .and_then(|rest| rest.strip_suffix(".json"))
        else {
            continue;
        };
        let Ok(bytes) = std::fs::read(entry.path()) else {
            continue;
        };
        if sha256_hex(&bytes) == hash {
            if let Some(ds) = parse(&bytes) {
                return Some(ds);
            }
        }
        tracing::warn!(file = %entry.path().display(), "discarding corrupt cached dataset");
        let _ = std::fs::remove_file(entry.path());
    }
    None
}

fn store_on_disk(dir: &Path, id: &str, bytes: &[u8]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{id}.{}.json", sha256_hex(bytes)));
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

impl DatasetCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            loaded: Default::default(),
        }
    }

    /// Returns the dataset, fetching it from `api` on first use. Concurrent
    /// callers wait for a single fetch.
    pub async fn get(&self, api: &ApiClient, id: &str) -> Result<Arc<Dataset>, ApiClientError> {
        let mut loaded = self.loaded.lock().await;
        if let Some(ds) = loaded.get(id) {
            return Ok(ds.clone());
        }
        let dir = self.dir.clone();
        let owned_id = id.to_string();
        let from_disk = match dir.clone() {
            Some(d) => tokio::task::spawn_blocking(move || load_from_disk(&d, &owned_id))
                .await
                .ok()
                .flatten(),
            None => None,
        };
        let ds = match from_disk {
            Some(ds) => ds,
            None => {
                let bytes = api.dataset_bytes(id).await?;
                let owned_id = id.to_string();
                tokio::task::spawn_blocking(move || {
                    let ds = parse(&bytes);
                    if let (Some(d), Some(_)) = (&dir, &ds) {
                        if let Err(e) = store_on_disk(d, &owned_id, &bytes) {
                            tracing::warn!(error = %e, "cannot cache dataset on disk");
                        }
                    }
                    ds
                })
                .await
                .ok()
                .flatten()
                .ok_or_else(|| ApiClientError::Transport {
                    addr: api.base_url().to_string(),
                    message: format!("dataset {id} arrived malformed"),
                })?
            }
        };
        let ds = Arc::new(ds);
        loaded.insert(id.to_string(), ds.clone());
        Ok(ds)
    }

    pub async fn len(&self) -> usize {
        self.loaded.lock().await.len()
    }

    pub async fn is_empty(&self) -> bool {
        self.loaded.lock().await.is_empty()
    }
}
