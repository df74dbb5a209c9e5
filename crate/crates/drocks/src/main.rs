//! Command-line entry point: `run` executes one experiment described by
//! a JSON config (flags override file values); `compare` ranks methods
//! across result CSVs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use drocks::experiment::{self, CompareMetric, ExperimentConfig, Method};
use drocks::federation::{Dropout, Topology};

#[derive(Parser)]
#[command(name = "drocks", version, about = "Federated time series classification with random convolutional kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config file.
    Run(RunArgs),
    /// Rank methods across result CSVs by mean rank.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the training method.
    #[arg(long)]
    method: Option<Method>,
    /// Override the kernel count K.
    #[arg(long)]
    kernels: Option<usize>,
    /// Override the client count N.
    #[arg(long)]
    clients: Option<usize>,
    /// Override the round cap R.
    #[arg(long)]
    rounds: Option<usize>,
    /// Override the visiting topology (ring or random).
    #[arg(long)]
    topology: Option<Topology>,
    /// Round at which the listed clients drop out.
    #[arg(long)]
    drop_round: Option<usize>,
    /// Comma-separated client ids that drop out.
    #[arg(long, value_delimiter = ',')]
    drop_clients: Option<Vec<usize>>,
    /// Override the number of repeats.
    #[arg(long)]
    repeats: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the dataset root directory.
    #[arg(long)]
    data_root: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Result CSVs produced by `run`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Ranking metric: f1 or acc.
    #[arg(long, default_value = "f1")]
    metric: CompareMetric,
}

fn apply_overrides(mut cfg: ExperimentConfig, args: &RunArgs) -> drocks::Result<ExperimentConfig> {
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(k) = args.kernels {
        cfg.kernels = k;
    }
    if let Some(n) = args.clients {
        cfg.clients = n;
    }
    if let Some(r) = args.rounds {
        cfg.rounds = r;
    }
    if let Some(t) = args.topology {
        cfg.topology = t;
    }
    match (&args.drop_round, &args.drop_clients) {
        (Some(round), Some(clients)) => {
            cfg.dropout = Some(Dropout { round: *round, clients: clients.clone() });
        }
        (None, None) => {}
        _ => {
            return Err(drocks::Error::InvalidConfig(
                "--drop-round and --drop-clients must be given together".into(),
            ));
        }
    }
    if let Some(r) = args.repeats {
        cfg.repeats = r;
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(root) = &args.data_root {
        cfg.data_root = Some(root.clone());
    }
    Ok(cfg)
}

fn run(args: &RunArgs) -> drocks::Result<()> {
    let cfg = apply_overrides(ExperimentConfig::from_file(&args.config)?, args)?;
    let outcome = experiment::run_experiment(&cfg)?;
    println!(
        "{} {} K={} repeats={}: accuracy {:.4}, macro-F1 {:.4}",
        cfg.dataset,
        cfg.method,
        cfg.kernels,
        outcome.repeats.len(),
        outcome.mean_accuracy,
        outcome.mean_macro_f1,
    );
    println!("results: {}", outcome.csv_path.display());
    println!("summary: {}", outcome.summary_path.display());
    Ok(())
}

fn compare(args: &CompareArgs) -> drocks::Result<()> {
    let report = experiment::compare(&args.reports, args.metric)?;
    println!("# datasets: {}", report.datasets.join(", "));
    println!("method,mean_rank");
    for (method, rank) in &report.ranks {
        println!("{method},{rank}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Compare(args) => compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
