//! Runtime configuration. Precedence: flags, then `SWEEP_*` environment
//! variables, then the TOML config file, then built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sweep_core::api::DEFAULT_MAX_UPLOAD_BYTES;
use sweep_core::broker::FsyncMode;
use sweep_core::sweep::DEFAULT_TASK_CAP;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub broker_addr: String,
    pub api_addr: String,
    pub data_dir: PathBuf,
    pub journal_fsync_mode: FsyncMode,
    pub lease_ttl_s: u64,
    pub max_upload_bytes: usize,
    pub task_cap: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            broker_addr: format!("127.0.0.1:{}", sweep_core::broker::DEFAULT_PORT),
            api_addr: format!("127.0.0.1:{}", sweep_core::api::DEFAULT_PORT),
            data_dir: PathBuf::from("sweep-data"),
            journal_fsync_mode: FsyncMode::Always,
            lease_ttl_s: 600,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            task_cap: DEFAULT_TASK_CAP,
        }
    }
}

/// One layer of settings; unset fields fall through to the next layer.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub broker_addr: Option<String>,
    pub api_addr: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub journal_fsync_mode: Option<String>,
    pub lease_ttl_s: Option<u64>,
    pub max_upload_bytes: Option<usize>,
    pub task_cap: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("invalid {field}: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

impl Layer {
    pub fn from_env(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        fn num<T: std::str::FromStr>(
            get: &impl Fn(&str) -> Option<String>,
            key: &'static str,
        ) -> Result<Option<T>, ConfigError> {
            get(key)
                .map(|v| v.trim().parse().map_err(|_| invalid(key, format!("`{v}` is not a number"))))
                .transpose()
        }
        Ok(Self {
            broker_addr: get("SWEEP_BROKER"),
            api_addr: get("SWEEP_API"),
            data_dir: get("SWEEP_DATA_DIR").map(PathBuf::from),
            journal_fsync_mode: get("SWEEP_FSYNC"),
            lease_ttl_s: num(&get, "SWEEP_LEASE_TTL_S")?,
            max_upload_bytes: num(&get, "SWEEP_MAX_UPLOAD_BYTES")?,
            task_cap: num(&get, "SWEEP_TASK_CAP")?,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::File {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    fn or(self, lower: Layer) -> Layer {
        Layer {
            broker_addr: self.broker_addr.or(lower.broker_addr),
            api_addr: self.api_addr.or(lower.api_addr),
            data_dir: self.data_dir.or(lower.data_dir),
            journal_fsync_mode: self.journal_fsync_mode.or(lower.journal_fsync_mode),
            lease_ttl_s: self.lease_ttl_s.or(lower.lease_ttl_s),
            max_upload_bytes: self.max_upload_bytes.or(lower.max_upload_bytes),
            task_cap: self.task_cap.or(lower.task_cap),
        }
    }
}

/// Checks `host:port` with a non-empty host and a non-zero port.
pub fn check_addr(field: &'static str, addr: &str) -> Result<(), ConfigError> {
    let bad = || invalid(field, format!("`{addr}` is not host:port"));
    let (host, port) = addr.rsplit_once(':').ok_or_else(bad)?;
    if host.is_empty() || host.contains(char::is_whitespace) {
        return Err(bad());
    }
    match port.parse::<u16>() {
        Ok(p) if p > 0 => Ok(()),
        _ => Err(bad()),
    }
}

impl Config {
    /// Merges `flags` over `env` over `file` over the defaults and validates.
    pub fn resolve(flags: Layer, env: Layer, file: Layer) -> Result<Self, ConfigError> {
        let merged = flags.or(env).or(file);
        let d = Config::default();
        let cfg = Config {
            broker_addr: merged.broker_addr.unwrap_or(d.broker_addr),
            api_addr: merged.api_addr.unwrap_or(d.api_addr),
            data_dir: merged.data_dir.unwrap_or(d.data_dir),
            journal_fsync_mode: match merged.journal_fsync_mode {
                Some(m) => m.parse().map_err(|e: String| invalid("journal_fsync_mode", e))?,
                None => d.journal_fsync_mode,
            },
            lease_ttl_s: merged.lease_ttl_s.unwrap_or(d.lease_ttl_s),
            max_upload_bytes: merged.max_upload_bytes.unwrap_or(d.max_upload_bytes),
            task_cap: merged.task_cap.unwrap_or(d.task_cap),
        };
        check_addr("broker_addr", &cfg.broker_addr)?;
        check_addr("api_addr", &cfg.api_addr)?;
        if cfg.lease_ttl_s == 0 {
            return Err(invalid("lease_ttl_s", "must be positive"));
        }
        if cfg.max_upload_bytes == 0 {
            return Err(invalid("max_upload_bytes", "must be positive"));
        }
        if cfg.task_cap == 0 {
            return Err(invalid("task_cap", "must be positive"));
        }
        Ok(cfg)
    }

    pub fn journal_path(&self) -> PathBuf {
        self.data_dir.join("broker").join("journal.log")
    }

    pub fn results_path(&self) -> PathBuf {
        self.data_dir.join("results").join("results.log")
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.data_dir.join("datasets")
    }

    pub fn worker_cache_dir(&self) -> PathBuf {
        self.data_dir.join("worker-cache")
    }
}
