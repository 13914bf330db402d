//! Command-line entry point. Exit status 0 on success, 1 for usage errors
//! and 2 for data errors; diagnostics go to the error stream and machine
//! output (JSON) to the data stream.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use tpc_core::neural::{HyperParams, Optimizer};
use tpc_core::roadnet::{build_stms, SpeedBinning};
use tpc_core::synth;
use tpc_core::time::parse_time_of_day;
use tpc_core::Timestamp;

use crate::config::{Config, ConfigError};
use crate::formats::{self, FormatError};
use crate::pipeline::{self, PipelineError};
use crate::service::{self, AppState, ServeError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tpc", version, about = "Traffic pattern classification and time-dependent routing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse sensor CSV into a labeled, normalized dataset
    Ingest(IngestArgs),
    /// Estimate speed transition matrices from transition events
    BuildStm(BuildStmArgs),
    /// Grid search with k-fold cross-validation
    Tune(TuneArgs),
    /// Train a classifier on a dataset
    Train(TrainArgs),
    /// Score a model on a dataset (metrics JSON on stdout)
    Evaluate(EvaluateArgs),
    /// Classify every window of raw sensor CSV
    Classify(ClassifyArgs),
    /// Build a route database from classifier output
    Patterns(PatternsArgs),
    /// Earliest-arrival route query
    Route(RouteArgs),
    /// Merge similar daily patterns
    Compress(CompressArgs),
    /// Run the route service
    Serve(ServeArgs),
    /// Write seeded synthetic sensor, graph and event files
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Output dataset file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Held-out dataset file; requires --test-fraction
    #[arg(long, requires = "test_fraction")]
    test_out: Option<PathBuf>,
    #[arg(long, requires = "test_out")]
    test_fraction: Option<f64>,
    /// Timesteps per window
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Add hour-of-day sine and cosine features
    #[arg(long)]
    time_features: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct BuildStmArgs {
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Daily windows
    #[arg(long)]
    windows: Option<usize>,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Grid spec JSON (defaults to the built-in grid)
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Report output file
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Model output file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Take hyperparameters from the best configuration of a tuning report
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Adam learning rate
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Print a text table instead of JSON
    #[arg(long)]
    text: bool,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PatternsArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Route database output file
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    windows: Option<usize>,
}

#[derive(Debug, Args)]
struct RouteArgs {
    #[arg(long)]
    db: Option<PathBuf>,
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    /// Departure time, HH:MM or HH:MM:SS
    #[arg(long)]
    depart: String,
}

#[derive(Debug, Args)]
struct CompressArgs {
    #[arg(long)]
    db: Option<PathBuf>,
    /// Merge tolerance in km/h
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    db: Option<PathBuf>,
    #[arg(long)]
    bind: Option<std::net::SocketAddr>,
    /// Feedback weight in [0, 1]
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    junctions: u32,
    #[arg(long, default_value_t = 28)]
    days: u32,
    #[arg(long, default_value_t = 3)]
    rows: usize,
    #[arg(long, default_value_t = 3)]
    cols: usize,
    #[arg(long, default_value_t = 400)]
    events_per_day: usize,
    /// First reading, `YYYY-MM-DD HH:MM:SS`
    #[arg(long, default_value = "2015-11-01 00:00:00")]
    start: String,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn need(flag: Option<PathBuf>, cfg: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| cfg.clone())
        .ok_or_else(|| CliError::Usage(format!("missing --{name} (not set in config either)")))
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(data)?;
    writeln!(out, "{text}").map_err(data)
}

/// Summary printed by commands whose main product is a file.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Written {
    pub written: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub details: serde_json::Map<String, serde_json::Value>,
}

fn written(paths: &[&Path], details: serde_json::Value) -> Written {
    let details = match details {
        serde_json::Value::Object(m) => m,
        _ => serde_json::Map::new(),
    };
    Written { written: paths.iter().map(|p| p.to_path_buf()).collect(), details }
}

/// Runs the CLI with explicit argument vector and streams; returns the exit
/// status.
pub fn run_cli<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let result = Config::from_env().map_err(CliError::from).and_then(|cfg| dispatch(cli.command, &cfg, out, err));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, cfg: &Config, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let p = &cfg.paths;
    match cmd {
        Command::Ingest(a) => {
            let csv = need(a.csv, &p.csv, "csv")?;
            let dst = need(a.out, &p.dataset, "out")?;
            let test_out = a.test_out.or_else(|| if a.test_fraction.is_some() { p.test_dataset.clone() } else { None });
            let mut window = cfg.window;
            window.length = a.window.unwrap_or(window.length);
            window.horizon = a.horizon.unwrap_or(window.horizon);
            window.time_features |= a.time_features;
            let text = formats::read_text(&csv)?;
            let (train, test) = pipeline::ingest_csv(&text, &cfg.taxonomy, &window, a.test_fraction, a.seed.unwrap_or(cfg.seed))?;
            formats::write_dataset(&dst, &train)?;
            let mut paths = vec![dst.as_path()];
            if let (Some(t), Some(path)) = (&test, &test_out) {
                formats::write_dataset(path, t)?;
                paths.push(path.as_path());
            }
            let details = serde_json::json!({ "train_samples": train.len(), "test_samples": test.as_ref().map(|t| t.len()) });
            emit(out, &written(&paths, details))
        }
        Command::BuildStm(a) => {
            let graph = formats::read_graph(&need(a.graph, &p.graph, "graph")?)?;
            let events = formats::read_events(&need(a.events, &p.events, "events")?)?;
            let dst = need(a.out, &p.stm_store, "out")?;
            let stms = build_stms(&graph, &events, a.windows.unwrap_or(cfg.num_windows), SpeedBinning::default()).map_err(data)?;
            formats::write_stms(&dst, &stms)?;
            emit(out, &written(&[&dst], serde_json::json!({ "matrices": stms.len(), "events": events.len() })))
        }
        Command::Tune(a) => {
            let set = formats::read_dataset(&need(a.dataset, &p.dataset, "dataset")?)?;
            let spec = match a.grid.or_else(|| p.grid.clone()) {
                Some(path) => formats::read_grid(&path)?,
                None => cfg.grid.clone().unwrap_or_default(),
            };
            let dst = need(a.out, &p.report, "out")?;
            let k = a.k.unwrap_or(cfg.k);
            let _ = writeln!(err, "tuning {} configurations with {k}-fold cross-validation", spec.size());
            let report = pipeline::tune_parallel(&spec, &set, k, a.seed.unwrap_or(cfg.seed), a.threads.or(cfg.threads))?;
            formats::write_report(&dst, &report)?;
            let best = report.best_config();
            let details = serde_json::json!({
                "configs": report.configs.len(),
                "best_ordinal": best.ordinal,
                "best_mean_accuracy": best.cv.mean_accuracy,
                "best_hyperparams": best.hyperparams,
            });
            emit(out, &written(&[&dst], details))
        }
        Command::Train(a) => {
            let set = formats::read_dataset(&need(a.dataset, &p.dataset, "dataset")?)?;
            let dst = need(a.out, &p.model, "out")?;
            let mut hp = match a.report.or_else(|| p.report.clone()) {
                Some(path) => formats::read_report(&path)?.best_config().hyperparams.clone(),
                None => HyperParams { seed: cfg.seed, ..Default::default() },
            };
            hp.output_size = a.hidden.unwrap_or(hp.output_size);
            hp.num_layers = a.layers.unwrap_or(hp.num_layers);
            hp.epochs = a.epochs.unwrap_or(hp.epochs);
            hp.batch_size = a.batch_size.unwrap_or(hp.batch_size);
            hp.dropout_rate = a.dropout.unwrap_or(hp.dropout_rate);
            hp.seed = a.seed.unwrap_or(hp.seed);
            if let Some(lr) = a.lr {
                hp.optimizer = match hp.optimizer {
                    Optimizer::Adam { beta1, beta2, eps, .. } => Optimizer::Adam { lr, beta1, beta2, eps },
                    Optimizer::Sgd { .. } => Optimizer::Sgd { lr },
                };
            }
            hp.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let model = pipeline::train_model(&set, &hp, cfg.window, |p| {
                let _ = writeln!(err, "epoch {}/{} loss {:.5}", p.epoch + 1, p.epochs, p.mean_loss);
            })?;
            formats::write_model(&dst, &model)?;
            emit(out, &written(&[&dst], serde_json::json!({ "hyperparams": hp, "samples": set.len() })))
        }
        Command::Evaluate(a) => {
            let model = formats::read_model(&need(a.model, &p.model, "model")?)?;
            let set = formats::read_dataset(&need(a.dataset, &p.test_dataset.clone().or(p.dataset.clone()), "dataset")?)?;
            let report = pipeline::evaluate(&model, &set)?;
            if a.text {
                write!(out, "{}", report.render_text()).map_err(data)
            } else {
                emit(out, &report)
            }
        }
        Command::Classify(a) => {
            let model = formats::read_model(&need(a.model, &p.model, "model")?)?;
            let text = formats::read_text(&need(a.csv, &p.csv, "csv")?)?;
            emit(out, &pipeline::classify_csv(&model, &text)?)
        }
        Command::Patterns(a) => {
            let model = formats::read_model(&need(a.model, &p.model, "model")?)?;
            let text = formats::read_text(&need(a.csv, &p.csv, "csv")?)?;
            let graph = formats::read_graph(&need(a.graph, &p.graph, "graph")?)?;
            let dst = need(a.out, &p.route_db, "out")?;
            if cfg.speed_factors.as_slice().len() != model.taxonomy.num_classes() {
                return Err(CliError::Data("speed factor count differs from the model's class count".into()));
            }
            let classes = pipeline::classify_csv(&model, &text)?;
            let db = pipeline::build_route_db(graph, &classes, a.windows.unwrap_or(cfg.num_windows), &cfg.speed_factors)?;
            formats::write_route_db(&dst, &db)?;
            emit(out, &written(&[&dst], serde_json::json!({ "segments": db.graph().segments().len(), "windows": db.num_windows() })))
        }
        Command::Route(a) => {
            let db = formats::read_route_db(&need(a.db, &p.route_db, "db")?)?;
            let depart = parse_time_of_day(&a.depart).map_err(|e| CliError::Usage(e.to_string()))?;
            let plan = db.best_route(&a.from, &a.to, f64::from(depart)).map_err(data)?;
            emit(out, &plan)
        }
        Command::Compress(a) => {
            if a.epsilon.is_nan() || a.epsilon < 0.0 {
                return Err(CliError::Usage("--epsilon must be non-negative".into()));
            }
            let src = need(a.db, &p.route_db, "db")?;
            let dst = a.out.unwrap_or_else(|| src.clone());
            let db = formats::read_route_db(&src)?;
            let compressed = db.compress_patterns(a.epsilon).map_err(data)?;
            formats::write_route_db(&dst, &compressed)?;
            let details = serde_json::json!({ "profiles_before": db.profile_count(), "profiles_after": compressed.profile_count() });
            emit(out, &written(&[&dst], details))
        }
        Command::Serve(a) => {
            let path = need(a.db, &p.route_db, "db")?;
            let db = formats::read_route_db(&path)?;
            let alpha = a.alpha.unwrap_or(cfg.feedback_alpha);
            if !(0.0..=1.0).contains(&alpha) {
                return Err(CliError::Usage("--alpha must lie in [0, 1]".into()));
            }
            let addr = a.bind.unwrap_or(cfg.bind);
            let rt = tokio::runtime::Runtime::new().map_err(data)?;
            rt.block_on(async {
                let listener = service::bind(addr).await?;
                let local = listener.local_addr().map_err(data)?;
                let _ = writeln!(err, "listening on {local}");
                let state = Arc::new(AppState::new(db, alpha));
                service::serve_with_shutdown(listener, state, Some(path), service::interrupt()).await?;
                let _ = writeln!(err, "shut down; route database flushed");
                Ok(())
            })
        }
        Command::Synth(a) => {
            let start = Timestamp::parse(&a.start).map_err(|e| CliError::Usage(e.to_string()))?;
            std::fs::create_dir_all(&a.out_dir).map_err(data)?;
            let csv_path = a.out_dir.join("traffic.csv");
            let graph_path = a.out_dir.join("graph.json");
            let events_path = a.out_dir.join("events.csv");
            let graph = synth::grid_graph(a.seed, a.rows, a.cols, a.junctions);
            formats::atomic_write(&csv_path, synth::traffic_csv(a.seed, a.junctions, a.days, start).as_bytes())?;
            formats::write_graph(&graph_path, &graph)?;
            let events = synth::transition_events(a.seed, &graph, a.days.min(7), a.events_per_day, start);
            formats::write_events(&events_path, &events)?;
            emit(out, &written(&[&csv_path, &graph_path, &events_path], serde_json::json!({ "seed": a.seed })))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tpc_core::tuning::GridSpec;

    fn run(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run_cli(std::iter::once("tpc").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        let (code, out, err) = run(&["route", "--bogus"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(out.is_empty());
        assert!(err.contains("--bogus"));
        assert_eq!(run(&[]).0, EXIT_USAGE);
    }

    #[test]
    fn help_goes_to_stdout() {
        let (code, out, _) = run(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("synth"));
    }

    #[test]
    fn grid_default_is_used_without_file() {
        assert_eq!(GridSpec::default().size(), 96);
    }
}
