use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ttk_cli::{cmd_compare, cmd_solve, cmd_sweep, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "ttk", about = "Sketched TT-GMRES experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Seed for the sketches and STTA frames (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV output.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Recompute the true residual after every iteration.
    #[arg(long, global = true)]
    track_true_residual: bool,
    #[arg(long, global = true)]
    maxit: Option<usize>,
    /// Target relative residual.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Kernel threads.
    #[arg(long, env = "TTK_THREADS", global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured solver once.
    Solve { config: PathBuf },
    /// Run the `[compare]` variants on one problem.
    Compare { config: PathBuf },
    /// Sweep one axis over the `[sweep]` values.
    Sweep { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(t) = cli.threads {
        ttk_core::set_threads(t);
    }
    let overrides =
        Overrides { seed: cli.seed, maxit: cli.maxit, tol: cli.tol, track_true_residual: cli.track_true_residual };
    let (path, run): (_, fn(&ExperimentConfig, &std::path::Path, &mut dyn std::io::Write) -> _) = match &cli.command {
        Command::Solve { config } => (config, cmd_solve),
        Command::Compare { config } => (config, cmd_compare),
        Command::Sweep { config } => (config, cmd_sweep),
    };
    let result = ExperimentConfig::load(path).and_then(|mut cfg| {
        cfg.apply(&overrides);
        run(&cfg, &cli.out_dir, &mut std::io::stdout())
    });
    match result {
        Ok(outcome) => ExitCode::from(outcome.code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
