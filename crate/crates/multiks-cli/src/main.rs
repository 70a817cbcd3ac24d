//! Experiment runner: reads a flat-text config, dispatches to the library,
//! and writes machine-readable results under the output directory.

use multiks_cli::{config, runner};

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

#[derive(Parser)]
#[command(
    name = "multiks",
    about = "Free-energy experiments for multi-population chemotaxis systems",
    version
)]
struct Args {
    /// Experiment configuration file (flat key = value text).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for result.txt, trace.csv, and field dumps.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for grid transforms (0 = hardware count).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Seed for randomized initializations.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write per-species binary field dumps.
    #[arg(long)]
    dump_fields: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();

    let threads = if args.threads == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        args.threads
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        eprintln!("multiks: thread pool: {e}");
        return ExitCode::from(runner::EXIT_CONFIG as u8);
    }

    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("multiks: reading {}: {e}", args.config.display());
            return ExitCode::from(runner::EXIT_CONFIG as u8);
        }
    };
    let cfg = match config::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("multiks: {e}");
            return ExitCode::from(runner::EXIT_CONFIG as u8);
        }
    };

    let ctx = runner::RunContext {
        out_dir: args.out,
        seed: args.seed,
        dump: args.dump_fields,
    };
    match runner::run(&cfg, &ctx) {
        Ok(code) => {
            println!(
                "multiks: {} finished with exit code {code} (results in {})",
                cfg.command.as_str(),
                ctx.out_dir.display()
            );
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("multiks: {e:#}");
            ExitCode::from(runner::EXIT_CONVERGENCE as u8)
        }
    }
}
