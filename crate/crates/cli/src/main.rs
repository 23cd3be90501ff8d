use std::path::PathBuf;
use std::process::ExitCode;

use active_cli::commands::{self, GraphChoice};
use active_cli::config::ExperimentConfig;
use active_cli::runner::{metrics_text, run_experiment};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "active", version, about = "Partial multi-view clustering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand that builds a configuration.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Neighbours per relation-graph list.
    #[arg(long)]
    k: Option<usize>,
    /// Missing rate (percent) for synthetic data.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    stage2_start: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    disable_rec: bool,
    #[arg(long)]
    disable_wgc: bool,
    #[arg(long)]
    disable_cgc: bool,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let pairs = [
            ("run.seed", self.seed.map(|v| v.to_string())),
            ("run.repeats", self.repeats.map(|v| v.to_string())),
            ("train.alpha", self.alpha.map(|v| v.to_string())),
            ("train.beta", self.beta.map(|v| v.to_string())),
            ("train.k", self.k.map(|v| v.to_string())),
            ("mask.p", self.p.map(|v| v.to_string())),
            ("train.stage2_start", self.stage2_start.map(|v| v.to_string())),
            ("train.max_epochs", self.max_epochs.map(|v| v.to_string())),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        let w = &mut cfg.train.weights;
        w.enable_rec &= !self.disable_rec;
        w.enable_wgc &= !self.disable_wgc;
        w.enable_cgc &= !self.disable_cgc;
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Repeat whose data seed is used.
        #[arg(long, default_value_t = 0)]
        repeat: usize,
    },
    /// Train one model and write a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Dataset directory; synthetic data is generated otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        repeat: usize,
    },
    /// Re-score a run directory's checkpoint.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every sweep point and repeat of a config.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory; defaults to `run.out` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a run's relation graph as CSV.
    DumpGraphs {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "learned")]
        which: GraphChoice,
        /// Defaults to `graphs.csv` in the run directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write a run's fused representation as CSV.
    DumpRepr {
        #[arg(long)]
        run: PathBuf,
        /// Defaults to `repr.csv` in the run directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData { cfg, out, repeat } => {
            commands::gen_data(&cfg.resolve()?, &out, repeat)?;
        }
        Command::Train { cfg, out, data, repeat } => {
            let m = commands::train(&cfg.resolve()?, &out, data.as_deref(), repeat)?;
            print!("{}", metrics_text(&m));
        }
        Command::Evaluate { run, data, checkpoint } => {
            let m = commands::evaluate(&run, data.as_deref(), checkpoint.as_deref())?;
            print!("{}", metrics_text(&m));
        }
        Command::Sweep { cfg, out } => {
            let cfg = cfg.resolve()?;
            let out = out
                .or_else(|| cfg.out.clone())
                .context("no output directory: pass --out or set run.out")?;
            let result = run_experiment(&cfg, &out)?;
            print!("{}", std::fs::read_to_string(out.join("aggregate.csv"))?);
            if result.failures() > 0 {
                eprintln!("{} of {} runs failed", result.failures(), result.records.len());
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::DumpGraphs { run, which, output, checkpoint } => {
            let output = output.unwrap_or_else(|| run.join("graphs.csv"));
            commands::dump_graphs(&run, which, &output, checkpoint.as_deref())?;
        }
        Command::DumpRepr { run, output, checkpoint } => {
            let output = output.unwrap_or_else(|| run.join("repr.csv"));
            commands::dump_repr(&run, &output, checkpoint.as_deref())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
