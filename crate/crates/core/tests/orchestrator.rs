use std::collections::HashSet;
use std::sync::Arc;

use sweep_core::broker::{Broker, BrokerConfig, TASK_QUEUE};
use sweep_core::clock::ManualClock;
use sweep_core::data::{load_csv, synthetic::BUNDLED_CSV};
use sweep_core::datasets::DatasetRepo;
use sweep_core::mlp::Activation;
use sweep_core::queue::{RemoteQueue, TaskQueue};
use sweep_core::store::ResultsStore;
use sweep_core::sweep::{
    LayerWidth, Orchestrator, SessionState, SweepError, SweepSpec, TaskSpec, DEFAULT_TASK_CAP,
};

struct Fixture {
    broker: Arc<Broker>,
    store: Arc<ResultsStore>,
    orchestrator: Orchestrator,
    dataset_id: String,
}

fn fixture(queue: Option<Arc<dyn TaskQueue>>) -> Fixture {
    let broker = Arc::new(Broker::in_memory(
        BrokerConfig::default(),
        Arc::new(ManualClock::default()),
    ));
    let store = Arc::new(ResultsStore::in_memory());
    let datasets = Arc::new(DatasetRepo::in_memory());
    let ds = datasets
        .insert(load_csv(BUNDLED_CSV.as_bytes(), "label", 0).unwrap())
        .unwrap();
    let queue = queue.unwrap_or_else(|| broker.clone());
    Fixture {
        orchestrator: Orchestrator::new(store.clone(), datasets, queue, DEFAULT_TASK_CAP),
        broker,
        store,
        dataset_id: ds.dataset_id.clone(),
    }
}

fn spec(dataset_id: &str) -> SweepSpec {
    SweepSpec {
        dataset_id: dataset_id.into(),
        hidden_layer_counts: vec![1, 2, 3],
        hidden_layer_width: LayerWidth::Uniform(4),
        activations: vec![Activation::Relu],
        learning_rates: vec![0.1, 0.01],
        epochs: 2,
        batch_size: 8,
        seeds: vec![1],
        engine: "native".into(),
    }
}

#[tokio::test]
async fn six_task_session_is_enqueued() {
    let f = fixture(None);
    let s = f.orchestrator.create_session(&spec(&f.dataset_id)).await.unwrap();
    assert_eq!(s.total_tasks, 6);
    assert_eq!(s.state, SessionState::Pending);
    assert_eq!(f.broker.stats(TASK_QUEUE).ready_count, 6);
    let leased = f.broker.lease(TASK_QUEUE, "c", 10).unwrap();
    let tasks: Vec<TaskSpec> = leased
        .iter()
        .map(|e| serde_json::from_slice(&e.payload).unwrap())
        .collect();
    assert!(tasks.iter().all(|t| t.session_id == s.session_id));
    assert_eq!(
        tasks.iter().map(|t| &t.task_id).collect::<HashSet<_>>().len(),
        6
    );
    // message id doubles as task id, so redelivery carries the dedupe key
    assert!(leased
        .iter()
        .zip(&tasks)
        .all(|(e, t)| e.message_id == t.task_id));
    let p = f.orchestrator.session_progress(&s.session_id).unwrap();
    assert_eq!((p.total, p.fraction), (6, 0.0));
}

#[tokio::test]
async fn unknown_dataset_creates_nothing() {
    let f = fixture(None);
    let err = f.orchestrator.create_session(&spec("missing")).await.unwrap_err();
    assert!(matches!(err, SweepError::NotFound { what: "dataset", .. }));
    assert!(f.store.sessions().is_empty());
    assert_eq!(f.broker.stats(TASK_QUEUE).ready_count, 0);
}

#[tokio::test]
async fn too_many_tasks_rejected_before_enqueue() {
    let f = fixture(None);
    let mut s = spec(&f.dataset_id);
    s.hidden_layer_counts = (0..50).collect();
    s.learning_rates = (1..=10).map(|i| i as f64 / 10.0).collect();
    s.activations = Activation::ALL.to_vec();
    s.seeds = (0..40).collect();
    assert_eq!(s.task_count(), 60_000);
    match f.orchestrator.create_session(&s).await {
        Err(SweepError::TooManyTasks { count: 60_000, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(f.broker.stats(TASK_QUEUE).ready_count, 0);
}

#[tokio::test]
async fn unreachable_broker_leaves_no_session() {
    // bind then drop to get a port nobody listens on
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let f = fixture(Some(Arc::new(RemoteQueue::new(addr, "gateway"))));
    let err = f.orchestrator.create_session(&spec(&f.dataset_id)).await.unwrap_err();
    assert!(matches!(err, SweepError::Unavailable(_)), "{err:?}");
    assert!(f.store.sessions().is_empty());
}

#[tokio::test]
async fn sessions_get_distinct_ids() {
    let f = fixture(None);
    let mut ids = HashSet::new();
    for _ in 0..5 {
        ids.insert(f.orchestrator.create_session(&spec(&f.dataset_id)).await.unwrap().session_id);
    }
    assert_eq!(ids.len(), 5);
    assert_eq!(f.broker.stats(TASK_QUEUE).ready_count, 30);
}

#[tokio::test]
async fn resubmitting_the_same_tasks_does_not_duplicate() {
    let f = fixture(None);
    let tasks = sweep_core::sweep::expand_grid(&spec(&f.dataset_id), "fixed", 100).unwrap();
    f.orchestrator
        .submit("fixed", &f.dataset_id, tasks.clone())
        .await
        .unwrap();
    // a retried submission after a lost response hits the duplicate session
    let again = f.orchestrator.submit("fixed", &f.dataset_id, tasks).await;
    assert!(again.is_err());
    assert_eq!(f.broker.stats(TASK_QUEUE).ready_count, 6);
}
