use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kpp_ips::harness::{exit_code, run, Command, RunConfig, RunOptions};

#[derive(Parser)]
#[command(name = "kpp", version, about = "KPP principal eigenvalues and front speeds in periodic flows")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate μ(λ) at a single λ
    Eig(Common),
    /// μ(λ) on a grid, rational fit and c*
    FrontSpeed(Common),
    /// Rescaled front speed over a σ grid and its power law
    Sweep(Common),
    /// Eigenvalue error against dt
    Convergence(Common),
    /// Particle histograms at phases of one period
    Histogram(Common),
    /// Fourier-Galerkin eigenvalues and splitting errors
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Fail with exit code 4 when the result disagrees with its reference
    #[arg(long)]
    assert: bool,
    #[arg(long)]
    out: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Eig(c) => (Command::Eig, c),
        Cmd::FrontSpeed(c) => (Command::FrontSpeed, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
        Cmd::Convergence(c) => (Command::Convergence, c),
        Cmd::Histogram(c) => (Command::Histogram, c),
        Cmd::Oracle(c) => (Command::Oracle, c),
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = RunConfig::load(&common.config).and_then(|mut cfg| {
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        run(command, &cfg, &RunOptions { out: common.out, assert: common.assert })
    });
    match result {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
