//! Acceptance suite. Prints one PASS/FAIL line per criterion with its
//! measured runtime and budget, then exits non-zero if any criterion failed.
//!
//! Run alone with `cargo test -p sweep-cli --test acceptance`.

mod common;

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::Duration as ChronoDuration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sweep_core::broker::{Broker, BrokerConfig, EnvelopeState, FsyncMode};
use sweep_core::clock::{Clock, ManualClock};
use sweep_core::data::{load_csv, synthetic, train_size};
use sweep_core::mlp::{argmax as argmax_row, init_network, train, Activation, MlpModel, TrainConfig};
use sweep_core::store::{ResultQuery, TaskStatus};
use sweep_core::sweep::{expand_grid, LayerWidth, Orchestrator, SweepSpec};
use sweep_core::worker::execute_task;

use common::{bundled_csv_file, field, grid_path, sweep, Stack};

/// Central-difference step and relative tolerance of the gradient check.
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-5;
const LEARNING_MIN_ACCURACY: f64 = 0.95;
const TREND_MIN_SPEARMAN: f64 = 0.8;

type Check = fn(&tokio::runtime::Runtime) -> Result<String, String>;

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .expect("tokio runtime");
    let checks: [(&str, Duration, Check); 8] = [
        ("gradient_oracle", Duration::from_secs(5), gradient_oracle),
        ("preprocessing_exactness", Duration::from_secs(1), preprocessing_exactness),
        ("learning_check", Duration::from_secs(10), learning_check),
        ("broker_delivery_under_failure", Duration::from_secs(30), broker_delivery_under_failure),
        ("crash_recovery", Duration::from_secs(10), crash_recovery),
        ("end_to_end_desk_sweep", Duration::from_secs(180), end_to_end_desk_sweep),
        ("fail_forward", Duration::from_secs(180), fail_forward),
        ("training_time_trend", Duration::from_secs(300), training_time_trend),
    ];
    let mut failed = 0;
    for (name, budget, check) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&rt)))
            .unwrap_or_else(|p| Err(panic_text(p.as_ref())));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("over time budget; {detail}")),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} {name:<30} {:>7.2}s / {:>3}s  {detail}",
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(p: &(dyn std::any::Any + Send)) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// network engine

/// Forward pass and cross-entropy written out longhand, independent of the
/// engine's own forward code.
fn naive_loss(model: &MlpModel, x: &[f64], t: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let n = model.weights().len();
    for k in 0..n {
        let w = &model.weights()[k];
        let mut z: Vec<f64> = (0..w.rows())
            .map(|i| model.biases()[k][i] + (0..w.cols()).map(|j| w.get(i, j) * a[j]).sum::<f64>())
            .collect();
        if k + 1 < n {
            for v in z.iter_mut() {
                *v = match model.hidden_activation() {
                    Activation::Sigmoid => 1.0 / (1.0 + (-*v).exp()),
                    Activation::Tanh => v.tanh(),
                    Activation::Relu => v.max(0.0),
                };
            }
        } else {
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            z = e.iter().map(|v| v / s).collect();
        }
        a = z;
    }
    -a.iter().zip(t).map(|(p, t)| t * (p + 1e-12).ln()).sum::<f64>()
}

fn gradient_oracle(_: &tokio::runtime::Runtime) -> Result<String, String> {
    let caps = [5, 7, 6, 4];
    let (mut params, mut worst) = (0usize, 0.0f64);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + seed);
        let depth = rng.random_range(2..=4);
        let mut sizes: Vec<usize> = (0..depth).map(|i| rng.random_range(1..=caps[i])).collect();
        sizes[depth - 1] = rng.random_range(2..=caps[depth - 1]);
        let act = Activation::ALL[seed as usize % 3];
        let mut model = init_network(&sizes, act, seed).map_err(|e| e.to_string())?;
        for b in model.biases_mut().iter_mut().flatten() {
            *b = rng.random_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut t = vec![0.0; sizes[depth - 1]];
        let hot = rng.random_range(0..t.len());
        t[hot] = 1.0;

        let (grads, _) = model.backprop_gradients(&x, &t).map_err(|e| e.to_string())?;
        let mut compare = |label: String, analytic: f64, perturb: &dyn Fn(&mut MlpModel, f64)| {
            let (mut plus, mut minus) = (model.clone(), model.clone());
            perturb(&mut plus, FD_STEP);
            perturb(&mut minus, -FD_STEP);
            let fd = (naive_loss(&plus, &x, &t) - naive_loss(&minus, &x, &t)) / (2.0 * FD_STEP);
            let rel = (analytic - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
            params += 1;
            ensure(rel <= FD_REL_TOL, || {
                format!("case {seed} {sizes:?} {act} {label}: analytic {analytic} vs fd {fd}")
            })
        };
        for k in 0..model.weights().len() {
            let (rows, cols) = model.weights()[k].shape();
            for r in 0..rows {
                for c in 0..cols {
                    compare(format!("w[{k}][{r},{c}]"), grads.weights[k].get(r, c), &|m, h| {
                        let v = m.weights()[k].get(r, c);
                        m.weights_mut()[k].set(r, c, v + h);
                    })?;
                }
                compare(format!("b[{k}][{r}]"), grads.biases[k][r], &|m, h| {
                    m.biases_mut()[k][r] += h
                })?;
            }
        }
    }
    Ok(format!("20 cases, {params} parameters, worst relative error {worst:.2e}"))
}

const FIXTURE: &str = "\
x1,x2,x3,y
-2,10,0.5,b
0,,0.25,a
4,30,0.75,b
1,20,1.0,c
3,40,0.0,a
-1,15,0.5,c
2,25,0.125,b
";

fn preprocessing_exactness(_: &tokio::runtime::Runtime) -> Result<String, String> {
    let ds = load_csv(FIXTURE.as_bytes(), "y", 0).map_err(|e| e.to_string())?;
    let raw: Vec<Vec<f64>> = FIXTURE
        .lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .take(3)
                .map(|c| if c.is_empty() { 0.0 } else { c.parse().unwrap() })
                .collect()
        })
        .collect();
    for c in 0..3 {
        let col: Vec<f64> = raw.iter().map(|r| r[c]).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (r, v) in col.iter().enumerate() {
            let got = ds.features.get(r, c);
            if *v == lo {
                ensure(got == 0.0, || format!("col {c} row {r}: min scaled to {got}"))?;
            }
            if *v == hi {
                ensure(got == 1.0, || format!("col {c} row {r}: max scaled to {got}"))?;
            }
            ensure((0.0..=1.0).contains(&got), || format!("col {c} row {r}: {got} outside [0,1]"))?;
        }
    }
    for r in 0..ds.n_rows() {
        let row = ds.labels_one_hot.row(r);
        ensure(row.iter().sum::<f64>() == 1.0, || format!("one-hot row {r} = {row:?}"))?;
        ensure(ds.class_names[argmax_row(row)] == ds.label_of(r), || format!("row {r} label"))?;
    }
    let mut sizes_checked = 0;
    for n in 5..=60 {
        let mut csv = String::from("a,y\n");
        for i in 0..n {
            csv.push_str(&format!("{i},{}\n", i % 2));
        }
        for seed in [0, 7] {
            let ds = load_csv(csv.as_bytes(), "y", seed).map_err(|e| e.to_string())?;
            let floor = (0.8 * n as f64).floor() as usize;
            ensure(ds.train_indices.len() == floor && train_size(n) == floor, || {
                format!("n={n}: train {} != floor(0.8n) {floor}", ds.train_indices.len())
            })?;
            ensure(ds.test_indices.len() == n - floor, || format!("n={n}: test size"))?;
            let train: HashSet<usize> = ds.train_indices.iter().copied().collect();
            let test: HashSet<usize> = ds.test_indices.iter().copied().collect();
            ensure(train.is_disjoint(&test), || format!("n={n}: split overlaps"))?;
            ensure(train.union(&test).count() == n && train.iter().chain(&test).all(|&i| i < n), || {
                format!("n={n}: split does not cover the rows")
            })?;
            sizes_checked += 1;
        }
    }
    Ok(format!("fixture 7x3 scaled/encoded exactly; {sizes_checked} split sizes checked"))
}

/// Best linear separation gap of two-feature points over 0.25° direction steps.
fn separation_gap(points: &[(f64, f64, usize)]) -> f64 {
    (0..1440)
        .map(|step| {
            let theta = step as f64 * std::f64::consts::PI / 720.0;
            let proj = |p: &(f64, f64, usize)| p.0 * theta.cos() + p.1 * theta.sin();
            let max0 = points.iter().filter(|p| p.2 == 0).map(proj).fold(f64::MIN, f64::max);
            let min1 = points.iter().filter(|p| p.2 == 1).map(proj).fold(f64::MAX, f64::min);
            min1 - max0
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn learning_check(_: &tokio::runtime::Runtime) -> Result<String, String> {
    let ds = load_csv(synthetic::BUNDLED_CSV.as_bytes(), "label", 0).map_err(|e| e.to_string())?;
    let points: Vec<(f64, f64, usize)> = (0..ds.n_rows())
        .map(|r| (ds.features.get(r, 0), ds.features.get(r, 1), argmax_row(ds.labels_one_hot.row(r))))
        .collect();
    let gap = separation_gap(&points);
    ensure(gap > 0.0, || format!("bundled dataset is not linearly separable (gap {gap})"))?;

    let (tx, ty) = ds.train_split();
    let (vx, vy) = ds.test_split();
    let model = init_network(&[2, 8, 2], Activation::Sigmoid, 1).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        learning_rate: 0.5,
        epochs: 200,
        batch_size: 16,
        seed: 1,
    };
    let out = train(model, &tx, &ty, &vx, &vy, &cfg).map_err(|e| e.to_string())?;
    ensure(out.test_accuracy >= LEARNING_MIN_ACCURACY, || {
        format!("test accuracy {} < {LEARNING_MIN_ACCURACY}", out.test_accuracy)
    })?;
    Ok(format!(
        "[2,8,2] sigmoid: test accuracy {:.3} on {} held-out rows; separation gap {gap:.3}",
        out.test_accuracy,
        vx.rows()
    ))
}

// ---------------------------------------------------------------------------
// broker

fn broker_delivery_under_failure(_: &tokio::runtime::Runtime) -> Result<String, String> {
    const MESSAGES: usize = 1_000;
    const CRASH_P: f64 = 0.1;
    let clock = ManualClock::default();
    let cfg = BrokerConfig {
        lease_ttl: ChronoDuration::seconds(30),
        max_deliveries: 3,
        ..Default::default()
    };
    let b = Broker::in_memory(cfg, Arc::new(clock.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    for i in 0..MESSAGES {
        b.enqueue("q", (i as u32).to_be_bytes().to_vec(), Some(format!("m{i:04}")))
            .map_err(|e| e.to_string())?;
    }
    let mut acked: HashSet<String> = HashSet::new();
    let mut held: HashMap<String, chrono::DateTime<chrono::Utc>> = HashMap::new();
    let (mut crashes, mut checkpoints, mut generation) = (0usize, 0usize, 0u64);
    for _round in 0..10_000 {
        for c in 0..4 {
            let consumer = format!("c{c}-{generation}");
            let got = b.lease("q", &consumer, rng.random_range(1..=4)).map_err(|e| e.to_string())?;
            for env in got {
                ensure(!acked.contains(&env.message_id), || {
                    format!("acked {} was redelivered", env.message_id)
                })?;
                if let Some(deadline) = held.get(&env.message_id) {
                    ensure(*deadline < clock.now(), || {
                        format!("{} leased by two consumers", env.message_id)
                    })?;
                }
                if rng.random_bool(CRASH_P) {
                    held.insert(env.message_id.clone(), env.lease_deadline.expect("leased"));
                    crashes += 1;
                    generation += 1;
                } else {
                    held.remove(&env.message_id);
                    b.ack(&env.message_id, &consumer).map_err(|e| e.to_string())?;
                    acked.insert(env.message_id);
                }
            }
        }
        clock.advance(ChronoDuration::seconds(10));
        b.sweep_expired(clock.now()).map_err(|e| e.to_string())?;

        let q = b.stats("q");
        let dead = b.stats("q.dead");
        let accounted = q.acked_total + q.ready_count + q.leased_count + dead.ready_count;
        ensure(accounted == MESSAGES as u64, || {
            format!(
                "checkpoint {checkpoints}: acked {} + ready {} + leased {} + dead {} != {MESSAGES}",
                q.acked_total, q.ready_count, q.leased_count, dead.ready_count
            )
        })?;
        checkpoints += 1;
        if q.ready_count == 0 && q.leased_count == 0 {
            let dead_ids: HashSet<String> = b.ready_ids("q.dead").into_iter().collect();
            for i in 0..MESSAGES {
                let id = format!("m{i:04}");
                let env = b.envelope(&id).ok_or_else(|| format!("{id} lost"))?;
                let done = env.state == EnvelopeState::Acked || dead_ids.contains(&id);
                ensure(done, || format!("{id} ended neither acked nor dead-lettered"))?;
            }
            return Ok(format!(
                "{MESSAGES} messages, {crashes} crashed deliveries: {} acked, {} dead-lettered; \
                 conservation held at {checkpoints} checkpoints",
                q.acked_total, dead.ready_count
            ));
        }
    }
    Err("messages still pending after the simulated time bound".into())
}

fn crash_recovery(_: &tokio::runtime::Runtime) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let live = dir.path().join("live.log");
    let snapshot = dir.path().join("after-crash.log");
    let clock = ManualClock::default();
    let cfg = BrokerConfig {
        fsync: FsyncMode::Always,
        ..Default::default()
    };
    let ids: Vec<String> = (0..1_000).map(|i| format!("m{i:04}")).collect();
    let (b, _) = Broker::open(&live, cfg.clone(), Arc::new(clock.clone())).map_err(|e| e.to_string())?;
    for id in &ids[..500] {
        b.enqueue("q", id.as_bytes().to_vec(), Some(id.clone())).map_err(|e| e.to_string())?;
    }
    // 250 leased, 200 of them acked in a scattered order; 50 stay leased
    let leased = b.lease("q", "consumer", 250).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut order: Vec<usize> = (0..250).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let acked: HashSet<String> = order[..200].iter().map(|&i| leased[i].message_id.clone()).collect();
    for id in &acked {
        b.ack(id, "consumer").map_err(|e| e.to_string())?;
    }
    // the journal as a killed process leaves it: no shutdown path runs
    std::fs::copy(&live, &snapshot).map_err(|e| e.to_string())?;
    std::mem::forget(b);

    let (r, rec) = Broker::open(&snapshot, cfg, Arc::new(clock)).map_err(|e| e.to_string())?;
    let stats = r.stats("q");
    ensure(stats.ready_count == 300 && stats.acked_total == 200 && stats.leased_count == 0, || {
        format!(
            "recovered ready {} / acked {} / leased {}",
            stats.ready_count, stats.acked_total, stats.leased_count
        )
    })?;
    let expected: Vec<String> = ids[..500].iter().filter(|id| !acked.contains(*id)).cloned().collect();
    ensure(r.ready_ids("q") == expected, || "ready order differs from enqueue order".into())?;
    for id in &acked {
        let state = r.envelope(id).map(|e| e.state);
        ensure(state == Some(EnvelopeState::Acked), || format!("{id} recovered as {state:?}"))?;
    }
    for id in &ids[500..] {
        r.enqueue("q", id.as_bytes().to_vec(), Some(id.clone())).map_err(|e| e.to_string())?;
    }
    let drained: Vec<String> = r
        .lease("q", "after", 1_000)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|e| e.message_id)
        .collect();
    let mut expected_all = expected;
    expected_all.extend(ids[500..].iter().cloned());
    ensure(drained == expected_all, || "post-recovery delivery is not FIFO".into())?;
    Ok(format!(
        "{} journal records replayed, {} leases released: 300 ready + 200 acked, FIFO kept",
        rec.records, rec.released_leases
    ))
}

// ---------------------------------------------------------------------------
// distributed runs

fn desk_spec(dataset_id: &str) -> SweepSpec {
    SweepSpec {
        dataset_id: dataset_id.into(),
        hidden_layer_counts: vec![1, 2, 3, 4],
        hidden_layer_width: LayerWidth::Uniform(8),
        activations: vec![Activation::Relu],
        learning_rates: vec![0.05, 0.2],
        epochs: 40,
        batch_size: 16,
        seeds: vec![1, 2, 3],
        engine: "native".into(),
    }
}

fn end_to_end_desk_sweep(rt: &tokio::runtime::Runtime) -> Result<String, String> {
    rt.block_on(async {
        let stack = Stack::start().await;
        let workers = [stack.spawn_worker("desk-a", 2), stack.spawn_worker("desk-b", 2)];
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let csv = bundled_csv_file(dir.path());
        let out = sweep(&[
            "submit",
            "--api",
            &stack.api_addr,
            "--dataset",
            csv.to_str().unwrap(),
            "--label",
            "label",
            "--grid",
            grid_path("desk.json").to_str().unwrap(),
        ])
        .await;
        ensure(out.code == 0, || format!("submit exited {}: {}", out.code, out.stderr))?;
        ensure(field(&out.stdout, "task_count") == Some("24"), || format!("submit said {}", out.stdout))?;
        let session = field(&out.stdout, "session_id").ok_or("no session_id")?.to_string();

        ensure(stack.wait_done(&session, Duration::from_secs(170)).await, || {
            "session did not reach state=done".into()
        })?;
        let p = stack.client().session(&session).await.map_err(|e| e.to_string())?;
        ensure(p.completed + p.failed == 24, || format!("completed {} + failed {}", p.completed, p.failed))?;
        let records = stack.state.store.query(&session, &ResultQuery::default());
        let distinct: HashSet<&str> = records.iter().map(|r| r.task_id.as_str()).collect();
        ensure(records.len() == 24 && distinct.len() == 24, || {
            format!("{} records, {} distinct task ids", records.len(), distinct.len())
        })?;

        let out = sweep(&["plotdata", "--api", &stack.api_addr, &session]).await;
        ensure(out.code == 0, || format!("plotdata exited {}: {}", out.code, out.stderr))?;
        let groups: Vec<&str> = out.stdout.lines().skip(1).collect();
        ensure(groups.len() == 4, || format!("plotdata emitted {} groups:\n{}", groups.len(), out.stdout))?;

        let per_worker: Vec<u64> = workers.iter().map(|w| w.metrics.processed()).collect();
        for w in workers {
            w.stop().await.map_err(|e| e.to_string())?;
        }
        Ok(format!(
            "24/24 tasks ({} succeeded, {} failed), per-worker {per_worker:?}, 4 plot groups",
            p.completed, p.failed
        ))
    })
}

fn fail_forward(rt: &tokio::runtime::Runtime) -> Result<String, String> {
    const DIVERGING_LR: f64 = 1e300;
    rt.block_on(async {
        let stack = Stack::start().await;
        let client = stack.client();
        let summary = client
            .upload_dataset(synthetic::BUNDLED_CSV.as_bytes().to_vec(), "label", None)
            .await
            .map_err(|e| e.to_string())?;
        let dataset = client.dataset(&summary.dataset_id).await.map_err(|e| e.to_string())?;
        let session = Orchestrator::new_session_id();
        let mut tasks = expand_grid(&desk_spec(&summary.dataset_id), &session, 100).map_err(|e| e.to_string())?;
        // depth 1 and 3 relu nets at this rate overflow for every seed tried
        let mut injected = Vec::new();
        for t in tasks.iter_mut().filter(|t| matches!(t.hidden_sizes.len(), 1 | 3)).take(5) {
            t.learning_rate = DIVERGING_LR;
            let probe = execute_task(t, &dataset, "probe");
            ensure(probe.status == TaskStatus::Failed, || {
                format!("{} did not diverge in a local probe", t.task_id)
            })?;
            injected.push(t.task_id.clone());
        }
        ensure(injected.len() == 5, || "could not pick 5 tasks to inject".into())?;
        stack
            .state
            .orchestrator
            .submit(&session, &summary.dataset_id, tasks)
            .await
            .map_err(|e| e.to_string())?;

        let workers = [stack.spawn_worker("ff-a", 2), stack.spawn_worker("ff-b", 2)];
        ensure(stack.wait_done(&session, Duration::from_secs(170)).await, || {
            "session did not reach state=done".into()
        })?;
        let failed = stack.state.store.query(
            &session,
            &ResultQuery {
                status: Some(TaskStatus::Failed),
                ..Default::default()
            },
        );
        let failed_ids: HashSet<&str> = failed.iter().map(|r| r.task_id.as_str()).collect();
        let expected: HashSet<&str> = injected.iter().map(String::as_str).collect();
        ensure(failed_ids == expected, || format!("failed tasks {failed_ids:?}, injected {expected:?}"))?;
        ensure(
            failed.iter().all(|r| r.error.as_deref().is_some_and(|e| !e.is_empty())),
            || "a failed record has no error text".into(),
        )?;
        ensure(stack.state.store.result_count(&session) == 24, || "missing records".into())?;
        ensure(workers.iter().all(|w| w.is_running()), || "a worker exited".into())?;
        let sample = failed[0].error.clone().unwrap_or_default();
        let processed: u64 = workers.iter().map(|w| w.metrics.processed()).sum();
        for w in workers {
            w.stop().await.map_err(|e| e.to_string())?;
        }
        Ok(format!("5 failed + 19 succeeded, workers processed {processed} and kept running; e.g. \"{sample}\""))
    })
}

// ---------------------------------------------------------------------------
// training time

/// Spearman correlation with average ranks for ties.
fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let r = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                out[k] = r;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn training_time_trend(_: &tokio::runtime::Runtime) -> Result<String, String> {
    let dataset = load_csv(synthetic::BUNDLED_CSV.as_bytes(), "label", 0).map_err(|e| e.to_string())?;
    let spec = SweepSpec {
        dataset_id: dataset.dataset_id.clone(),
        hidden_layer_counts: (1..=8).collect(),
        hidden_layer_width: LayerWidth::Uniform(32),
        activations: vec![Activation::Tanh],
        learning_rates: vec![0.05],
        epochs: 15,
        batch_size: 16,
        seeds: vec![1, 2, 3],
        engine: "native".into(),
    };
    let tasks = expand_grid(&spec, "trend", 100).map_err(|e| e.to_string())?;
    let mut by_depth: HashMap<usize, Vec<f64>> = HashMap::new();
    for t in &tasks {
        let r = execute_task(t, &dataset, "trend");
        let secs = r
            .train_seconds
            .ok_or_else(|| format!("{} failed: {:?}", t.task_id, r.error))?;
        by_depth.entry(t.hidden_sizes.len()).or_default().push(secs);
    }
    let depths: Vec<f64> = (1..=8).map(|d| d as f64).collect();
    let means: Vec<f64> = (1..=8)
        .map(|d| by_depth[&d].iter().sum::<f64>() / by_depth[&d].len() as f64)
        .collect();
    let rho = spearman(&depths, &means);
    let shown: Vec<String> = means.iter().map(|m| format!("{:.0}", m * 1e3)).collect();
    let detail = format!("spearman {rho:.3}; mean ms by depth 1..8: [{}]", shown.join(", "));
    ensure(rho > TREND_MIN_SPEARMAN, || format!("{detail} (need > {TREND_MIN_SPEARMAN})"))?;
    Ok(detail)
}
