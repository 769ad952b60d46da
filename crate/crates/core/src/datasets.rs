//! Preprocessed datasets, kept in memory and optionally mirrored as one
//! JSON file per dataset under a directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;

use crate::data::Dataset;

#[derive(Debug)]
pub struct DatasetRepo {
    dir: Option<PathBuf>,
    cache: RwLock<HashMap<String, Arc<Dataset>>>,
}

impl DatasetRepo {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            cache: RwLock::new(HashMap::new()),
        })
    }

    fn path_for(dir: &Path, id: &str) -> Option<PathBuf> {
        // ids are uuids; anything else never touches the filesystem
        uuid::Uuid::parse_str(id).ok()?;
        Some(dir.join(format!("{id}.json")))
    }

    pub fn insert(&self, dataset: Dataset) -> std::io::Result<Arc<Dataset>> {
        if let Some(dir) = &self.dir {
            let path = Self::path_for(dir, &dataset.dataset_id).ok_or_else(|| {
                std::io::Error::new(std::io::ErrorKind::InvalidInput, "dataset id is not a uuid")
            })?;
            let tmp = path.with_extension("json.tmp");
            std::fs::write(&tmp, serde_json::to_vec(&dataset).map_err(std::io::Error::other)?)?;
            std::fs::File::open(&tmp)?.sync_all()?;
            std::fs::rename(&tmp, &path)?;
        }
        let ds = Arc::new(dataset);
        self.cache.write().insert(ds.dataset_id.clone(), ds.clone());
        Ok(ds)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Dataset>> {
        if let Some(ds) = self.cache.read().get(id) {
            return Some(ds.clone());
        }
        let path = Self::path_for(self.dir.as_ref()?, id)?;
        let bytes = std::fs::read(path).ok()?;
        let ds: Arc<Dataset> = Arc::new(serde_json::from_slice(&bytes).ok()?);
        self.cache.write().insert(id.to_string(), ds.clone());
        Some(ds)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.cache.read().contains_key(id)
            || self
                .dir
                .as_ref()
                .and_then(|d| Self::path_for(d, id))
                .is_some_and(|p| p.exists())
    }
}
