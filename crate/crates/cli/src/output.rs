//! Text renderings of API responses.

use sweep_core::store::{ResultRecord, SeriesPoint};
use sweep_core::sweep::Progress;

pub const RESULT_COLUMNS: [&str; 15] = [
    "task_id",
    "session_id",
    "status",
    "accuracy",
    "train_seconds",
    "hidden_layer_count",
    "hidden_sizes",
    "activation",
    "learning_rate",
    "epochs",
    "batch_size",
    "seed",
    "worker_name",
    "finished_at",
    "error",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn result_row(r: &ResultRecord) -> Vec<String> {
    vec![
        r.task_id.clone(),
        r.session_id.clone(),
        r.status.to_string(),
        opt(r.accuracy),
        opt(r.train_seconds),
        r.hidden_layer_count().to_string(),
        r.params
            .hidden_sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(";"),
        r.params.activation.to_string(),
        r.params.learning_rate.to_string(),
        r.params.epochs.to_string(),
        r.params.batch_size.to_string(),
        r.params.seed.to_string(),
        r.worker_name.clone(),
        r.finished_at.to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
        r.error.clone().unwrap_or_default(),
    ]
}

pub fn results_csv(records: &[ResultRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULT_COLUMNS).expect("in-memory write");
    for r in records {
        w.write_record(result_row(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

pub fn results_table(records: &[ResultRecord]) -> String {
    let header = [
        "task_id", "status", "accuracy", "train_s", "hidden", "activation", "lr", "seed", "worker",
        "error",
    ];
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.task_id.clone(),
                r.status.to_string(),
                r.accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
                r.train_seconds.map(|t| format!("{t:.3}")).unwrap_or_else(|| "-".into()),
                format!("{:?}", r.params.hidden_sizes),
                r.params.activation.to_string(),
                r.params.learning_rate.to_string(),
                r.params.seed.to_string(),
                r.worker_name.clone(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    table(&header, &rows)
}

pub fn status_table(session_id: &str, p: &Progress) -> String {
    let state = serde_json::to_value(p.state)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    table(
        &["session", "total", "completed", "failed", "fraction", "state"],
        &[vec![
            session_id.to_string(),
            p.total.to_string(),
            p.completed.to_string(),
            p.failed.to_string(),
            format!("{:.3}", p.fraction),
            state,
        ]],
    )
}

pub fn series_csv(points: &[SeriesPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "count"]).expect("in-memory write");
    for p in points {
        w.write_record([p.x.to_string(), p.y.to_string(), p.count.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}
