use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fedld::aggregation::{AggregationKind, Revision};
use fedld::orchestrator::{self, ablate, materialize_partition, prepare_federation, summarize_metrics};
use fedld::{metrics, Error, Result, RunConfig};

#[derive(Parser)]
#[command(name = "fedld", about = "Federated learning simulator with loss-decomposition diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize client shards and the test split as CSV files.
    Partition(Overrides),
    /// Execute a configuration.
    Run(Overrides),
    /// Run the margin × principal ablation grid and print a comparison table.
    Ablate {
        #[command(flatten)]
        overrides: Overrides,
        /// Number of seeds, starting from --seed (or the config seed).
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Print a summary of a metrics file (or of a run directory).
    Inspect {
        /// metrics.jsonl, or a directory containing one.
        path: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fedavg,
    Principal,
}

#[derive(Clone, Copy, ValueEnum)]
enum RevisionArg {
    Normalized,
    Literal,
}

#[derive(Args)]
struct Overrides {
    /// JSON run configuration; defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    decompose_every: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long = "lambda")]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    revision: Option<RevisionArg>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = Some(dir.clone());
        }
        if let Some(k) = self.decompose_every {
            cfg.decompose_every = k;
        }
        if let Some(mode) = self.mode {
            cfg.mode.kind = match mode {
                ModeArg::Fedavg => AggregationKind::Fedavg,
                ModeArg::Principal => AggregationKind::Principal,
            };
        }
        if let Some(lambda) = self.lambda {
            cfg.local.lambda = lambda;
        }
        if let Some(rev) = self.revision {
            cfg.mode.revision = match rev {
                RevisionArg::Normalized => Revision::Normalized,
                RevisionArg::Literal => Revision::Literal,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Partition(o) => {
            let cfg = o.resolve()?;
            let dir = cfg
                .output_dir
                .clone()
                .ok_or_else(|| Error::Config("partition needs --output-dir".into()))?;
            let fed = prepare_federation(&cfg.data, &cfg.federation)?;
            materialize_partition(&fed, &dir)?;
            for s in &fed.shards {
                println!(
                    "client {:>3}: {:>6} samples  labels {:?}",
                    s.client_id,
                    s.n_samples(),
                    s.data.class_histogram(fed.classes)
                );
            }
            println!("test split: {} samples -> {}", fed.test.len(), dir.display());
            Ok(0)
        }
        Command::Run(o) => {
            let cfg = o.resolve()?;
            let summary = orchestrator::run(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(if summary.persisted_partial { 4 } else { 0 })
        }
        Command::Ablate { overrides, seeds } => {
            let cfg = overrides.resolve()?;
            let lambda = if cfg.local.lambda > 0.0 { cfg.local.lambda } else { 0.03 };
            let seed_list: Vec<u64> = (0..seeds).map(|k| cfg.seed + k).collect();
            let table = ablate(&cfg, lambda, &seed_list)?;
            print!("{table}");
            Ok(0)
        }
        Command::Inspect { path } => {
            let file = if path.is_dir() { path.join(metrics::METRICS_JSONL) } else { path };
            let rows = metrics::read_metrics(&file)?;
            println!("{}", summarize_metrics(&rows)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
