//! Fixtures shared by the benchmarks.

use chrono::{TimeZone, Utc};
use sweep_core::data::{load_csv, synthetic, Dataset};
use sweep_core::mlp::Activation;
use sweep_core::store::{ResultRecord, TaskStatus};
use sweep_core::sweep::{expand_grid, LayerWidth, SweepSpec, TaskSpec};

pub fn blobs() -> Dataset {
    load_csv(synthetic::BUNDLED_CSV.as_bytes(), "label", 0).expect("bundled dataset loads")
}

/// A grid with `counts × 3 activations × 4 rates × seeds` tasks.
pub fn grid(counts: usize, seeds: u64) -> SweepSpec {
    SweepSpec {
        dataset_id: "bench".into(),
        hidden_layer_counts: (0..counts).collect(),
        hidden_layer_width: LayerWidth::Uniform(16),
        activations: Activation::ALL.to_vec(),
        learning_rates: vec![0.01, 0.05, 0.1, 0.5],
        epochs: 10,
        batch_size: 16,
        seeds: (0..seeds).collect(),
        engine: "native".into(),
    }
}

/// One synthetic succeeded record per task of `grid(counts, seeds)`.
pub fn records(counts: usize, seeds: u64) -> Vec<ResultRecord> {
    let tasks: Vec<TaskSpec> = expand_grid(&grid(counts, seeds), "bench", usize::MAX).expect("grid expands");
    let at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    tasks
        .iter()
        .enumerate()
        .map(|(i, t)| ResultRecord {
            task_id: t.task_id.clone(),
            session_id: t.session_id.clone(),
            status: TaskStatus::Succeeded,
            accuracy: Some((i % 97) as f64 / 97.0),
            train_seconds: Some(0.1 * t.hidden_sizes.len() as f64),
            loss_history: None,
            params: t.params(),
            worker_name: "bench".into(),
            finished_at: at,
            error: None,
        })
        .collect()
}
