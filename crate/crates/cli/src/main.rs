use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdis_cli::{emit_to, run_experiment, search_bounds, ExperimentConfig, Format, HarnessError, Method};

#[derive(Parser)]
#[command(name = "sdis", version, about = "Rare-event failure probability experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicated estimates on a benchmark problem.
    Run(RunArgs),
    /// Print radial search bounds of the chi distribution.
    Bounds {
        #[arg(long, default_value_t = 1e-10)]
        alpha: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 100, 1000, 10_000, 100_000, 1_000_000])]
        dims: Vec<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// enhanced-sdis or sus.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// json, csv or table.
    #[arg(long)]
    format: Option<Format>,
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn into_config(self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(b) = self.benchmark {
            cfg.benchmark = b;
        }
        if self.dim.is_some() {
            cfg.dim = self.dim;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(r) = self.reps {
            cfg.reps = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.out.is_some() {
            cfg.out = self.out;
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.into_config()?;
            let report = run_experiment(&cfg)?;
            emit_to(&report, &cfg)
        }
        Command::Bounds { alpha, dims } => {
            println!("{:>10}{:>14}{:>14}", "n", "r-", "r+");
            for (n, lo, hi) in search_bounds(&dims, alpha)? {
                println!("{n:>10}{lo:>14.5}{hi:>14.5}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(2)
        }
    }
}
