use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use activelab::classifier::TrainConfig;
use activelab::dataset::{load_dataset, save_dataset};
use activelab::driver::{
    baseline, read_series, run, write_series, ActiveLearner, ALConfig, LabelStreamMode,
    BASELINE_EPOCHS,
};
use activelab::label_stream::PseudoLabelConfig;
use activelab::sample_stream::SelectionStrategy;
use activelab::synth::{generate_synthetic, SynthConfig};
use activelab::Dataset;
use activelab_cli::series_to_csv;
use activelab_cli::service::{router, AppState, Session};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "activelab", version, about = "Multi-label active learning workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset file.
    Generate {
        /// JSON generator config; defaults to lusms-synth-v1.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Headless loop with the simulated oracle.
    Run {
        #[command(flatten)]
        loop_args: LoopArgs,
        /// Where to write the report series.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train on the whole pool and evaluate on the test split.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = BASELINE_EPOCHS)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Where to write the JSON report; printed otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Human-in-the-loop annotation service.
    Serve {
        #[command(flatten)]
        loop_args: LoopArgs,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Convert a report series to CSV.
    Report {
        series: PathBuf,
        /// Output file; stdout otherwise.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset file; defaults to lusms-synth-v1 generated from --seed.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stream {
    Manual,
    PseudoLabel,
    Validated,
}

#[derive(Args)]
struct LoopArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_strategy, default_value = "mlm")]
    strategy: SelectionStrategy,
    #[arg(long, default_value_t = 25)]
    k_max: usize,
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "validated")]
    label_stream: Stream,
    /// Stop once test macro-accuracy reaches this value.
    #[arg(long)]
    target: Option<f64>,
    /// Fine-tuning epochs per iteration.
    #[arg(long)]
    epochs: Option<usize>,
}

fn parse_strategy(s: &str) -> Result<SelectionStrategy, String> {
    s.parse().map_err(|e: activelab::Error| e.to_string())
}

impl DataArgs {
    fn load(&self) -> anyhow::Result<Dataset> {
        match &self.data {
            Some(path) => load_dataset(path).with_context(|| format!("loading {}", path.display())),
            None => Ok(generate_synthetic(&SynthConfig::lusms_synth_v1(self.seed))?),
        }
    }
}

impl LoopArgs {
    fn config(&self) -> ALConfig {
        let defaults = ALConfig::default();
        ALConfig {
            k_max: self.k_max,
            max_iterations: self.iterations,
            strategy: self.strategy,
            pseudo: PseudoLabelConfig {
                threshold: self.threshold,
                ..defaults.pseudo
            },
            label_stream: match self.label_stream {
                Stream::Manual => LabelStreamMode::Manual,
                Stream::PseudoLabel => LabelStreamMode::PseudoLabel,
                Stream::Validated => LabelStreamMode::Validated,
            },
            target_metric: self.target,
            seed: self.data.seed,
            train: TrainConfig {
                epochs: self.epochs.unwrap_or(defaults.train.epochs),
                ..defaults.train.clone()
            },
            ..defaults
        }
    }
}

/// Writes to stdout; a reader that went away early is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Generate { config, seed, out } => {
            let cfg = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text).context("parsing generator config")?
                }
                None => SynthConfig::lusms_synth_v1(seed),
            };
            let data = generate_synthetic(&cfg)?;
            save_dataset(&data, &out)?;
            log::info!("wrote {} samples to {}", data.len(), out.display());
        }
        Command::Run { loop_args, report } => {
            let config = loop_args.config();
            config.validate()?;
            let data = Arc::new(loop_args.data.load()?);
            let result = run(&config, data, None)?;
            let series = write_series(&result);
            match report {
                Some(path) => fs::write(&path, series).with_context(|| format!("writing {}", path.display()))?,
                None => emit(&series)?,
            }
            if let Some(last) = result.final_iteration() {
                log::info!(
                    "stopped ({:?}) after {} iterations: {} labeled, macro accuracy {:.4}",
                    result.stop_reason,
                    last.iteration,
                    last.labeled_count,
                    last.macro_accuracy
                );
            }
        }
        Command::Baseline { data, epochs, threshold, out } => {
            let dataset = data.load()?;
            let train = TrainConfig {
                epochs,
                seed: data.seed,
                ..TrainConfig::default()
            };
            let pseudo = PseudoLabelConfig {
                threshold,
                ..PseudoLabelConfig::default()
            };
            let (_, report) = baseline(&dataset, &train, &pseudo)?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => fs::write(&path, json)?,
                None => emit(&(json + "\n"))?,
            }
        }
        Command::Serve { loop_args, host, port } => {
            let config = loop_args.config();
            let data = Arc::new(loop_args.data.load()?);
            let session = Session::new(ActiveLearner::new(config, data)?)?;
            let app = router(AppState::new(session));
            let addr = SocketAddr::new(host, port);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                log::info!("serving on http://{}", listener.local_addr()?);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })?;
        }
        Command::Report { series, out } => {
            let text = fs::read_to_string(&series).with_context(|| format!("reading {}", series.display()))?;
            let report = read_series(&text)?;
            if report.iterations.is_empty() {
                bail!("{} holds no iterations", series.display());
            }
            let csv = series_to_csv(&report)?;
            match out {
                Some(path) => fs::write(&path, csv)?,
                None => emit(&csv)?,
            }
        }
    }
    Ok(())
}
