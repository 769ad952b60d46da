use std::panic::{catch_unwind, AssertUnwindSafe};

use chrono::Utc;

use crate::data::Dataset;
use crate::mlp::{init_network, train, MlpError, TrainReport};
use crate::store::{ResultRecord, TaskStatus};
use crate::sweep::TaskSpec;

fn run(task: &TaskSpec, dataset: &Dataset) -> Result<TrainReport, MlpError> {
    let sizes = task.layer_sizes(dataset.n_features(), dataset.n_classes());
    let model = init_network(&sizes, task.activation, task.seed)?;
    let (train_x, train_y) = dataset.train_split();
    let (test_x, test_y) = dataset.test_split();
    train(model, &train_x, &train_y, &test_x, &test_y, &task.train_config())
}

fn panic_text(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

/// Trains one task and folds every outcome, including errors and panics,
/// into a result record.
pub fn execute_task(task: &TaskSpec, dataset: &Dataset, worker_name: &str) -> ResultRecord {
    let mut record = ResultRecord {
        task_id: task.task_id.clone(),
        session_id: task.session_id.clone(),
        status: TaskStatus::Failed,
        accuracy: None,
        train_seconds: None,
        loss_history: None,
        params: task.params(),
        worker_name: worker_name.to_string(),
        finished_at: Utc::now(),
        error: None,
    };
    if task.dataset_id != dataset.dataset_id {
        record.error = Some(format!(
            "task expects dataset {} but was given {}",
            task.dataset_id, dataset.dataset_id
        ));
        return record;
    }
    match catch_unwind(AssertUnwindSafe(|| run(task, dataset))) {
        Ok(Ok(report)) => {
            record.status = TaskStatus::Succeeded;
            record.accuracy = Some(report.test_accuracy);
            record.train_seconds = Some(report.train_seconds);
            record.loss_history = Some(report.loss_history.iter().map(|e| e.loss).collect());
        }
        Ok(Err(e)) => record.error = Some(e.to_string()),
        Err(panic) => record.error = Some(format!("training panicked: {}", panic_text(&*panic))),
    }
    record.finished_at = Utc::now();
    record
}
