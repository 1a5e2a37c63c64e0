use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cutstokes::cli::{parse_config, run, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "cutstokes", version, about = "Unfitted Q2-Q1 solver for two-phase Stokes flow with interfacial slip")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study described by a key=value configuration file.
    Run {
        config: PathBuf,
        /// Output directory (overrides `out` in the configuration).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip meshes finer than this.
        #[arg(long, default_value_t = 32)]
        n_max: usize,
        /// Worker threads; falls back to CUTSTOKES_THREADS.
        #[arg(long, env = "CUTSTOKES_THREADS")]
        threads: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Command::Run { config, out, n_max, threads } = Args::parse().command;

    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("cannot configure {t} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let text = match std::fs::read_to_string(&config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", config.display());
            return ExitCode::from(2);
        }
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    match run(&cfg, &RunOptions { out, n_max }) {
        Ok(summary) => {
            for row in summary.rows.iter().filter(|r| !r.ok()) {
                eprintln!("case {} (n = {}) failed: {}", row.case_id, row.n, row.message.as_deref().unwrap_or(&row.status));
            }
            println!("wrote {}", summary.out_dir.display());
            if summary.all_ok() { ExitCode::SUCCESS } else { ExitCode::from(1) }
        }
        Err(e @ CliError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
