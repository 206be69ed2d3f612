use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvsde_core::drift::{Architecture, System};
use mvsde_core::estimate::Estimator;
use mvsde_core::experiment::{
    cmd_eval, cmd_generate, cmd_simulate, cmd_train, DataConfig, EvalSource, ExperimentConfig, Outputs, SyntheticData,
};
use mvsde_core::Error;

#[derive(Parser)]
#[command(name = "mvsde", version, about = "Simulate particle systems and learn their drifts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and its held-out companion.
    Simulate(Common),
    /// Train a drift model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint (or the true drift) and write metrics.csv.
    Eval(EvalArgs),
    /// Sample trajectories from a checkpoint.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use synthetic data from this system.
    #[arg(long)]
    system: Option<System>,
    /// Read training data from a trajectory CSV instead.
    #[arg(long, conflicts_with = "system")]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    architecture: Option<Architecture>,
    #[arg(long)]
    estimator: Option<Estimator>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    architecture: Option<Architecture>,
    /// Defaults to checkpoint.json in the output directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score the data's true drift instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    truth: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Defaults to checkpoint.json in the output directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(system) = common.system {
        cfg.data = DataConfig::Synthetic(SyntheticData::new(system));
    }
    if let Some(path) = &common.dataset {
        cfg.data = DataConfig::File { path: path.clone(), held_out: None, system: None };
    }
    Ok(cfg)
}

fn set_architecture(cfg: &mut ExperimentConfig, kind: Option<Architecture>) {
    if let Some(kind) = kind {
        cfg.architecture.kind = kind;
    }
}

fn run(cli: Cli) -> Result<Outputs, Error> {
    match cli.command {
        Command::Simulate(common) => cmd_simulate(&load(&common)?),
        Command::Train(args) => {
            let mut cfg = load(&args.common)?;
            set_architecture(&mut cfg, args.architecture);
            if let Some(e) = args.estimator {
                cfg.train.estimator = e;
            }
            if let Some(n) = args.epochs {
                cfg.train.epochs = n;
            }
            if let Some(lr) = args.lr {
                cfg.train.optimizer.lr = lr;
            }
            cmd_train(&cfg)
        }
        Command::Eval(args) => {
            let mut cfg = load(&args.common)?;
            set_architecture(&mut cfg, args.architecture);
            let source = if args.truth {
                EvalSource::Truth
            } else {
                EvalSource::Checkpoint(args.checkpoint.unwrap_or_else(|| cfg.out.join("checkpoint.json")))
            };
            cmd_eval(&cfg, &source)
        }
        Command::Generate(args) => {
            let mut cfg = load(&args.common)?;
            let g = &mut cfg.generate;
            g.n = args.n.unwrap_or(g.n);
            g.t_end = args.t_end.or(g.t_end);
            g.dt = args.dt.or(g.dt);
            g.sigma = args.sigma.or(g.sigma);
            let checkpoint = args.checkpoint.unwrap_or_else(|| cfg.out.join("checkpoint.json"));
            cmd_generate(&cfg, &checkpoint)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(outputs) => {
            for f in &outputs.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
