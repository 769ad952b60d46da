//! Durable, idempotent storage of sessions and task results.
//!
//! Everything lives in one append-only file of framed JSON entries (the same
//! framing as the broker journal). An in-memory index by task id and session
//! id is rebuilt on open. Writes go through a single writer; the first record
//! for a task id wins and later ones are acknowledged but dropped.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::frame::FramedLog;
use crate::mlp::Activation;
use crate::sweep::{Progress, SessionMeta, TaskParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Succeeded,
    Failed,
}

impl FromStr for TaskStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "succeeded" => Ok(TaskStatus::Succeeded),
            "failed" => Ok(TaskStatus::Failed),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

impl std::fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskStatus::Succeeded => "succeeded",
            TaskStatus::Failed => "failed",
        })
    }
}

/// Outcome of one training task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub task_id: String,
    pub session_id: String,
    pub status: TaskStatus,
    pub accuracy: Option<f64>,
    pub train_seconds: Option<f64>,
    pub loss_history: Option<Vec<f64>>,
    pub params: TaskParams,
    pub worker_name: String,
    pub finished_at: DateTime<Utc>,
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn hidden_layer_count(&self) -> usize {
        self.params.hidden_sizes.len()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid `{field}`: {message}")]
    Validation { field: &'static str, message: String },
    #[error("session {0} already exists")]
    DuplicateSession(String),
    #[error("storage failure: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(field: &'static str, message: impl Into<String>) -> StoreError {
    StoreError::Validation {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Stored,
    DuplicateIgnored,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LogEntry {
    Session(SessionMeta),
    Result(ResultRecord),
}

#[derive(Debug, Default)]
struct Index {
    sessions: HashMap<String, SessionMeta>,
    results: Vec<ResultRecord>,
    by_task: HashMap<String, usize>,
    by_session: HashMap<String, Vec<usize>>,
}

impl Index {
    fn apply(&mut self, entry: LogEntry) {
        match entry {
            LogEntry::Session(meta) => {
                self.sessions.insert(meta.session_id.clone(), meta);
            }
            LogEntry::Result(rec) => {
                if self.by_task.contains_key(&rec.task_id) {
                    return;
                }
                let i = self.results.len();
                self.by_task.insert(rec.task_id.clone(), i);
                self.by_session.entry(rec.session_id.clone()).or_default().push(i);
                self.results.push(rec);
            }
        }
    }

    fn session_results(&self, session_id: &str) -> impl Iterator<Item = &ResultRecord> {
        self.by_session
            .get(session_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.results[i])
    }
}

#[derive(Debug)]
pub struct ResultsStore {
    index: RwLock<Index>,
    writer: Mutex<Option<FramedLog>>,
}

impl ResultsStore {
    pub fn in_memory() -> Self {
        Self {
            index: RwLock::new(Index::default()),
            writer: Mutex::new(None),
        }
    }

    /// Opens the log at `path`, rebuilding the index. A torn tail is cut off
    /// and the file compacted.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let (log, scan) = FramedLog::open(path)?;
        let mut index = Index::default();
        let mut undecodable = 0usize;
        for raw in &scan.records {
            match serde_json::from_slice::<LogEntry>(raw) {
                Ok(e) => index.apply(e),
                Err(_) => undecodable += 1,
            }
        }
        let store = Self {
            index: RwLock::new(index),
            writer: Mutex::new(Some(log)),
        };
        if scan.torn || undecodable > 0 {
            tracing::warn!(undecodable, torn = scan.torn, "compacting results log");
            store.compact()?;
        }
        Ok(store)
    }

    /// Rewrites the log with exactly the indexed sessions and results.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut writer = self.writer.lock();
        let Some(log) = writer.as_mut() else {
            return Ok(());
        };
        let index = self.index.read();
        let mut sessions: Vec<&SessionMeta> = index.sessions.values().collect();
        sessions.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.session_id.cmp(&b.session_id)));
        let mut encoded: Vec<Vec<u8>> = Vec::with_capacity(sessions.len() + index.results.len());
        for s in sessions {
            encoded.push(serde_json::to_vec(&LogEntry::Session(s.clone())).map_err(std::io::Error::other)?);
        }
        for r in &index.results {
            encoded.push(serde_json::to_vec(&LogEntry::Result(r.clone())).map_err(std::io::Error::other)?);
        }
        log.rewrite(encoded.iter().map(Vec::as_slice))?;
        Ok(())
    }

    fn persist(&self, writer: &mut Option<FramedLog>, entry: &LogEntry) -> Result<(), StoreError> {
        if let Some(log) = writer.as_mut() {
            let bytes = serde_json::to_vec(entry).map_err(std::io::Error::other)?;
            log.append(&bytes)?;
            log.sync()?;
        }
        Ok(())
    }

    pub fn register_session(&self, meta: SessionMeta) -> Result<(), StoreError> {
        let mut writer = self.writer.lock();
        if self.index.read().sessions.contains_key(&meta.session_id) {
            return Err(StoreError::DuplicateSession(meta.session_id));
        }
        let entry = LogEntry::Session(meta);
        self.persist(&mut writer, &entry)?;
        self.index.write().apply(entry);
        Ok(())
    }

    pub fn session(&self, session_id: &str) -> Option<SessionMeta> {
        self.index.read().sessions.get(session_id).cloned()
    }

    pub fn sessions(&self) -> Vec<SessionMeta> {
        let mut all: Vec<SessionMeta> = self.index.read().sessions.values().cloned().collect();
        all.sort_by_key(|s| s.created_at);
        all
    }

    /// Stores the first result for a task id; later ones are ignored.
    /// Returns once the record is on disk.
    pub fn put_result(&self, record: ResultRecord) -> Result<PutOutcome, StoreError> {
        let mut writer = self.writer.lock();
        {
            let index = self.index.read();
            if index.by_task.contains_key(&record.task_id) {
                return Ok(PutOutcome::DuplicateIgnored);
            }
            if !index.sessions.contains_key(&record.session_id) {
                return Err(invalid("session_id", format!("unknown session {}", record.session_id)));
            }
        }
        validate(&record)?;
        let entry = LogEntry::Result(record);
        self.persist(&mut writer, &entry)?;
        self.index.write().apply(entry);
        Ok(PutOutcome::Stored)
    }

    pub fn get_result(&self, task_id: &str) -> Option<ResultRecord> {
        let index = self.index.read();
        index.by_task.get(task_id).map(|&i| index.results[i].clone())
    }

    /// Counters for a session derived from its stored results.
    pub fn progress(&self, session_id: &str) -> Option<Progress> {
        let index = self.index.read();
        let meta = index.sessions.get(session_id)?;
        let (mut completed, mut failed) = (0, 0);
        for r in index.session_results(session_id) {
            match r.status {
                TaskStatus::Succeeded => completed += 1,
                TaskStatus::Failed => failed += 1,
            }
        }
        Some(Progress::new(meta.total_tasks, completed, failed))
    }

    pub fn result_count(&self, session_id: &str) -> usize {
        self.index.read().by_session.get(session_id).map_or(0, Vec::len)
    }

    pub fn query(&self, session_id: &str, query: &ResultQuery) -> Vec<ResultRecord> {
        let index = self.index.read();
        let mut rows: Vec<&ResultRecord> = index
            .session_results(session_id)
            .filter(|r| query.matches(r))
            .collect();
        rows.sort_by(|a, b| query.sort.compare(a, b));
        rows.into_iter()
            .take(query.limit.unwrap_or(usize::MAX))
            .cloned()
            .collect()
    }

    /// Groups succeeded records by `x`, reduces `y` per group, sorted by `x`.
    pub fn aggregate(
        &self,
        session_id: &str,
        x: XField,
        y: YField,
        reducer: Reducer,
    ) -> Vec<SeriesPoint> {
        let index = self.index.read();
        aggregate_records(index.session_results(session_id), x, y, reducer)
    }
}

fn validate(r: &ResultRecord) -> Result<(), StoreError> {
    if r.task_id.is_empty() {
        return Err(invalid("task_id", "must not be empty"));
    }
    if let Some(a) = r.accuracy {
        if !(0.0..=1.0).contains(&a) {
            return Err(invalid("accuracy", format!("{a} is outside [0, 1]")));
        }
    }
    if let Some(t) = r.train_seconds {
        if !(t.is_finite() && t >= 0.0) {
            return Err(invalid("train_seconds", format!("{t} is not a non-negative number")));
        }
    }
    match r.status {
        TaskStatus::Succeeded => {
            if r.accuracy.is_none() {
                return Err(invalid("accuracy", "required when status is succeeded"));
            }
            if r.train_seconds.is_none() {
                return Err(invalid("train_seconds", "required when status is succeeded"));
            }
            if r.loss_history.is_none() {
                return Err(invalid("loss_history", "required when status is succeeded"));
            }
            if r.error.is_some() {
                return Err(invalid("error", "must be absent when status is succeeded"));
            }
        }
        TaskStatus::Failed => {
            if r.error.is_none() {
                return Err(invalid("error", "required when status is failed"));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortField {
    Accuracy,
    TrainSeconds,
    HiddenLayerCount,
    LearningRate,
    FinishedAt,
}

/// Sort order for queries. Records missing the sort value always go last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SortKey {
    pub field: SortField,
    pub descending: bool,
}

impl Default for SortKey {
    fn default() -> Self {
        Self {
            field: SortField::Accuracy,
            descending: true,
        }
    }
}

impl FromStr for SortKey {
    type Err = String;

    /// `accuracy` sorts descending by default, everything else ascending;
    /// a leading `-` or `+` forces the direction.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (forced, name) = match s.as_bytes().first() {
            Some(b'-') => (Some(true), &s[1..]),
            Some(b'+') => (Some(false), &s[1..]),
            _ => (None, s),
        };
        let field = match name {
            "accuracy" => SortField::Accuracy,
            "train_seconds" => SortField::TrainSeconds,
            "hidden_layer_count" => SortField::HiddenLayerCount,
            "learning_rate" => SortField::LearningRate,
            "finished_at" => SortField::FinishedAt,
            other => return Err(format!("unknown sort key `{other}`")),
        };
        Ok(Self {
            field,
            descending: forced.unwrap_or(field == SortField::Accuracy),
        })
    }
}

impl SortKey {
    fn value(&self, r: &ResultRecord) -> Option<f64> {
        match self.field {
            SortField::Accuracy => r.accuracy,
            SortField::TrainSeconds => r.train_seconds,
            SortField::HiddenLayerCount => Some(r.hidden_layer_count() as f64),
            SortField::LearningRate => Some(r.params.learning_rate),
            SortField::FinishedAt => Some(r.finished_at.timestamp_micros() as f64),
        }
    }

    fn compare(&self, a: &ResultRecord, b: &ResultRecord) -> Ordering {
        match (self.value(a), self.value(b)) {
            (Some(x), Some(y)) => {
                let o = x.total_cmp(&y);
                if self.descending {
                    o.reverse()
                } else {
                    o
                }
            }
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ResultQuery {
    pub status: Option<TaskStatus>,
    pub activation: Option<Activation>,
    pub lr_min: Option<f64>,
    pub lr_max: Option<f64>,
    pub sort: SortKey,
    pub limit: Option<usize>,
}

impl ResultQuery {
    fn matches(&self, r: &ResultRecord) -> bool {
        self.status.is_none_or(|s| r.status == s)
            && self.activation.is_none_or(|a| r.params.activation == a)
            && self.lr_min.is_none_or(|m| r.params.learning_rate >= m)
            && self.lr_max.is_none_or(|m| r.params.learning_rate <= m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XField {
    HiddenLayerCount,
    Activation,
    LearningRate,
    Seed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YField {
    Accuracy,
    TrainSeconds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reducer {
    Mean,
    Min,
    Max,
}

macro_rules! parse_via_serde {
    ($($t:ty),*) => {$(
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                serde_json::from_value(serde_json::Value::String(s.to_string()))
                    .map_err(|_| format!("unknown value `{s}`"))
            }
        }
    )*};
}
parse_via_serde!(XField, YField, Reducer);

/// Grouping key of an aggregate series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum XValue {
    Int(u64),
    Float(f64),
    Text(String),
}

impl std::fmt::Display for XValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            XValue::Int(v) => write!(f, "{v}"),
            XValue::Float(v) => write!(f, "{v}"),
            XValue::Text(v) => f.write_str(v),
        }
    }
}

impl Eq for XValue {}

impl PartialOrd for XValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for XValue {
    fn cmp(&self, other: &Self) -> Ordering {
        use XValue::*;
        match (self, other) {
            (Int(a), Int(b)) => a.cmp(b),
            (Float(a), Float(b)) => a.total_cmp(b),
            (Text(a), Text(b)) => a.cmp(b),
            (Int(_), _) => Ordering::Less,
            (_, Int(_)) => Ordering::Greater,
            (Float(_), _) => Ordering::Less,
            (_, Float(_)) => Ordering::Greater,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub x: XValue,
    pub y: f64,
    pub count: usize,
}

pub fn x_value(r: &ResultRecord, x: XField) -> XValue {
    match x {
        XField::HiddenLayerCount => XValue::Int(r.hidden_layer_count() as u64),
        XField::Activation => XValue::Text(r.params.activation.to_string()),
        XField::LearningRate => XValue::Float(r.params.learning_rate),
        XField::Seed => XValue::Int(r.params.seed),
    }
}

pub fn aggregate_records<'a>(
    records: impl IntoIterator<Item = &'a ResultRecord>,
    x: XField,
    y: YField,
    reducer: Reducer,
) -> Vec<SeriesPoint> {
    let mut groups: BTreeMap<XValue, Vec<f64>> = BTreeMap::new();
    for r in records {
        if r.status != TaskStatus::Succeeded {
            continue;
        }
        let value = match y {
            YField::Accuracy => r.accuracy,
            YField::TrainSeconds => r.train_seconds,
        };
        if let Some(v) = value {
            groups.entry(x_value(r, x)).or_default().push(v);
        }
    }
    groups
        .into_iter()
        .map(|(x, ys)| {
            let y = match reducer {
                Reducer::Mean => ys.iter().sum::<f64>() / ys.len() as f64,
                Reducer::Min => ys.iter().copied().fold(f64::INFINITY, f64::min),
                Reducer::Max => ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            SeriesPoint {
                x,
                y,
                count: ys.len(),
            }
        })
        .collect()
}
