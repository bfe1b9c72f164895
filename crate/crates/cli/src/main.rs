use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fastslow_cli::output::OutDir;
use fastslow_cli::{commands, verify, ExperimentConfig};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "fastslow", version, about = "Averaging and fluctuation experiments for fast-slow maps")]
struct Cli {
    /// TOML experiment config; the shipped default when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Averaged drift, its derivative and Var^2 on the slow grid.
    Fields,
    /// Stationary density of the diffusion approximation.
    Stationary,
    /// Central Lyapunov exponent: orbit estimate, averaged formula, (A3).
    Lyapunov,
    /// Deterministic vs diffusion TV along the eps-ladder.
    Compare,
    /// Gaussian mixture fit of the ensemble at the last snapshot time.
    Metastable,
    /// Center leaves, conjugacies and the fixed-point multiplier table.
    Foliation,
    /// Rate function V(t, y) by shooting.
    Ratefn,
    /// Run the acceptance checks and write a pass/fail table.
    Verify {
        /// Only these criteria (comma separated).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
    /// Print the shipped default config.
    DefaultConfig,
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    if let Command::DefaultConfig = cli.command {
        print!("{}", fastslow_cli::config::DEFAULT_CONFIG);
        return Ok(true);
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default_config(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.output.dir = o;
    }
    let out = OutDir::create(&cfg.output.dir)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        anyhow::ensure!(w > 0, "--workers must be positive");
        builder = builder.num_threads(w);
    }
    let pool = builder.build().context("building worker pool")?;
    pool.install(|| match cli.command {
        Command::Fields => print_json(&commands::fields(&cfg, &out)?).map(|_| true),
        Command::Stationary => print_json(&commands::stationary(&cfg, &out)?).map(|_| true),
        Command::Lyapunov => print_json(&commands::lyapunov(&cfg, &out)?).map(|_| true),
        Command::Compare => print_json(&commands::compare(&cfg, &out)?).map(|_| true),
        Command::Metastable => print_json(&commands::metastable(&cfg, &out)?).map(|_| true),
        Command::Foliation => print_json(&commands::foliation(&cfg, &out)?).map(|_| true),
        Command::Ratefn => print_json(&commands::ratefn(&cfg, &out)?).map(|_| true),
        Command::Verify { only } => {
            let summary = verify::verify(&cfg, &out, &only)?;
            for c in &summary.criteria {
                println!("{}", c.line());
            }
            Ok(summary.all_passed)
        }
        Command::DefaultConfig => unreachable!(),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        // acceptance failures
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
