use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zvonkin_harness::output::load_config;
use zvonkin_harness::{run, Command, RunConfig};

#[derive(Parser)]
#[command(name = "zvonkin", version, about = "Spectral SPDE experiments with a bounded measurable drift")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// TOML config, or a previous run's manifest.json to replay it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Spectral data of the Dirichlet Laplacian.
    Model,
    /// Sample paths and path diagnostics.
    Simulate,
    /// Coupled refinement differences and the A_T functional.
    Uniqueness,
    /// Build the transform and check its Lipschitz bounds.
    Transform,
    /// Resolvent mass, Lipschitz and T_lambda contraction.
    Resolvent,
    /// Stationary second moments against the invariant measure.
    Invariants,
    /// The full acceptance suite.
    Acceptance,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Model => Command::Model,
            Cmd::Simulate => Command::Simulate,
            Cmd::Uniqueness => Command::Uniqueness,
            Cmd::Transform => Command::Transform,
            Cmd::Resolvent => Command::Resolvent,
            Cmd::Invariants => Command::Invariants,
            Cmd::Acceptance => Command::Acceptance,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => match load_config(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(e.exit_code() as u8);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.run.out = o;
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = w;
    }
    let code = cfg.check().and_then(|()| run(cli.cmd.into(), &cfg));
    match code {
        Ok(c) => ExitCode::from(c as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
