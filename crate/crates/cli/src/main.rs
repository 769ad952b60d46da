mod config;
mod output;
mod roles;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use config::{Config, ConfigError, Layer};
use sweep_core::api::client::ResultsParams;
use sweep_core::api::{ApiClient, ApiClientError};
use sweep_core::store::{Reducer, XField, YField};
use sweep_core::sweep::{SessionState, SweepSpec};

#[derive(Parser)]
#[command(name = "sweep", version, about = "Distributed hyperparameter sweeps over small feed-forward networks")]
struct Cli {
    /// TOML file with default settings (overridden by SWEEP_* variables and flags)
    #[arg(long, global = true, env = "SWEEP_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the task broker
    Broker {
        #[arg(long)]
        port: Option<u16>,
        /// Interface to listen on
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Journal fsync policy: always | batched
        #[arg(long)]
        fsync: Option<String>,
        #[arg(long)]
        lease_ttl_s: Option<u64>,
    },
    /// Run the REST gateway
    Server {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long)]
        broker: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Directory served at `/` (the dashboard build)
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Allow cross-origin requests from any origin
        #[arg(long)]
        dev_cors: bool,
        #[arg(long)]
        max_upload_bytes: Option<usize>,
        #[arg(long)]
        task_cap: Option<usize>,
    },
    /// Run a training worker
    Worker {
        #[arg(long)]
        broker: Option<String>,
        #[arg(long)]
        api: Option<String>,
        /// Concurrent training slots (default: number of cores)
        #[arg(long)]
        slots: Option<usize>,
        /// Unique worker name (default: host-pid-random)
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Upload a CSV and start a sweep over it
    Submit {
        #[arg(long)]
        api: Option<String>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        label: String,
        /// Sweep document (JSON, or TOML with a .toml extension); its dataset_id is filled in
        #[arg(long)]
        grid: PathBuf,
        /// Seed of the train/test split
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Show session progress
    Status {
        #[arg(long)]
        api: Option<String>,
        session: String,
        /// Poll until the session is done
        #[arg(long)]
        watch: bool,
        #[arg(long, default_value_t = 1000)]
        interval_ms: u64,
    },
    /// Print result records
    Results {
        #[arg(long)]
        api: Option<String>,
        session: String,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// accuracy | train_seconds | hidden_layer_count | learning_rate | finished_at, optional +/- prefix
        #[arg(long)]
        sort: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
        /// succeeded | failed
        #[arg(long)]
        status: Option<String>,
    },
    /// Print an aggregate series as `x,y,count` CSV
    Plotdata {
        #[arg(long)]
        api: Option<String>,
        session: String,
        /// hidden_layer_count | activation | learning_rate | seed
        #[arg(long, default_value = "hidden_layer_count")]
        x: String,
        /// accuracy | train_seconds
        #[arg(long, default_value = "accuracy")]
        y: String,
        /// mean | min | max
        #[arg(long, default_value = "mean")]
        reduce: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Table,
}

/// Failure classes map onto exit codes: 1 transport, 2 API or usage.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Transport(String),
    #[error("{}: {}", .0.code, .0.message)]
    Api(sweep_core::api::ApiError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Transport(_) => 1,
            CliError::Api(_) | CliError::Usage(_) => 2,
        }
    }
}

impl From<ApiClientError> for CliError {
    fn from(e: ApiClientError) -> Self {
        match e {
            ApiClientError::Api(e) => CliError::Api(e),
            other => CliError::Transport(other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn resolve(config_file: Option<&PathBuf>, flags: Layer) -> Result<Config, CliError> {
    let env = Layer::from_env(|k| std::env::var(k).ok())?;
    let file = match config_file {
        Some(p) => Layer::from_file(p)?,
        None => Layer::default(),
    };
    Ok(Config::resolve(flags, env, file)?)
}

fn api_flags(api: Option<String>) -> Layer {
    Layer {
        api_addr: api,
        ..Layer::default()
    }
}

fn parse_arg<T: std::str::FromStr<Err = String>>(flag: &str, raw: &str) -> Result<T, CliError> {
    raw.parse().map_err(|e| CliError::Usage(format!("--{flag}: {e}")))
}

fn read_grid(path: &PathBuf, dataset_id: &str) -> Result<SweepSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut doc: serde_json::Value = if path.extension().is_some_and(|e| e == "toml") {
        let v: toml::Value =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::to_value(v).map_err(|e| CliError::Usage(e.to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
    };
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("{}: expected an object", path.display())))?;
    obj.insert("dataset_id".into(), dataset_id.into());
    serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let cfg_file = cli.config.as_ref();
    match cli.command {
        Command::Broker {
            port,
            bind,
            data_dir,
            fsync,
            lease_ttl_s,
        } => {
            let cfg = resolve(
                cfg_file,
                Layer {
                    data_dir,
                    journal_fsync_mode: fsync,
                    lease_ttl_s,
                    ..Layer::default()
                },
            )?;
            roles::broker(&cfg, &bind, port).await
        }
        Command::Server {
            port,
            bind,
            broker,
            data_dir,
            static_dir,
            dev_cors,
            max_upload_bytes,
            task_cap,
        } => {
            let cfg = resolve(
                cfg_file,
                Layer {
                    broker_addr: broker,
                    data_dir,
                    max_upload_bytes,
                    task_cap,
                    ..Layer::default()
                },
            )?;
            roles::server(&cfg, &bind, port, static_dir, dev_cors).await
        }
        Command::Worker {
            broker,
            api,
            slots,
            name,
            data_dir,
        } => {
            let cfg = resolve(
                cfg_file,
                Layer {
                    broker_addr: broker,
                    api_addr: api,
                    data_dir,
                    ..Layer::default()
                },
            )?;
            roles::worker(&cfg, slots, name).await
        }
        Command::Submit {
            api,
            dataset,
            label,
            grid,
            seed,
        } => {
            let cfg = resolve(cfg_file, api_flags(api))?;
            let client = ApiClient::new(&cfg.api_addr);
            // read the grid before uploading so a bad document uploads nothing
            read_grid(&grid, "pending")?;
            let csv = std::fs::read(&dataset)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dataset.display())))?;
            let summary = client.upload_dataset(csv, &label, seed).await?;
            let spec = read_grid(&grid, &summary.dataset_id)?;
            let created = client.create_session(&spec).await?;
            println!("dataset_id={}", summary.dataset_id);
            println!("session_id={}", created.session_id);
            println!("task_count={}", created.task_count);
            Ok(())
        }
        Command::Status {
            api,
            session,
            watch,
            interval_ms,
        } => {
            let cfg = resolve(cfg_file, api_flags(api))?;
            let client = ApiClient::new(&cfg.api_addr);
            loop {
                let p = client.session(&session).await?;
                print!("{}", output::status_table(&session, &p));
                if !watch || p.state == SessionState::Done {
                    return Ok(());
                }
                tokio::time::sleep(Duration::from_millis(interval_ms.max(50))).await;
            }
        }
        Command::Results {
            api,
            session,
            format,
            sort,
            limit,
            status,
        } => {
            let cfg = resolve(cfg_file, api_flags(api))?;
            let client = ApiClient::new(&cfg.api_addr);
            let records = client
                .results(
                    &session,
                    &ResultsParams {
                        status,
                        sort,
                        limit,
                        ..Default::default()
                    },
                )
                .await?;
            match format {
                Format::Csv => print!("{}", output::results_csv(&records)),
                Format::Table => print!("{}", output::results_table(&records)),
            }
            Ok(())
        }
        Command::Plotdata {
            api,
            session,
            x,
            y,
            reduce,
        } => {
            let x: XField = parse_arg("x", &x)?;
            let y: YField = parse_arg("y", &y)?;
            let reduce: Reducer = parse_arg("reduce", &reduce)?;
            let cfg = resolve(cfg_file, api_flags(api))?;
            let points = ApiClient::new(&cfg.api_addr)
                .aggregate(&session, x, y, reduce)
                .await?;
            print!("{}", output::series_csv(&points));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("SWEEP_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
