use std::path::PathBuf;
use std::process::ExitCode;

use carnot_potential::{
    invalid_config, list_experiments, run, thread_count, ExperimentConfig, RunError,
};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "carnot-potential",
    version,
    about = "Potential theory experiments on Carnot groups"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's output_dir, else ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; falls back to CARNOT_POTENTIAL_THREADS.
        #[arg(long)]
        threads: Option<usize>,
        /// Replace the config's rng_seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// List the available experiments.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            print!("{}", list_experiments());
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            out,
            threads,
            seed_override,
        } => {
            let parsed = std::fs::read_to_string(&config)
                .map_err(|e| RunError::Validation(format!("{}: {e}", config.display())))
                .and_then(|text| ExperimentConfig::from_json(&text));
            let fallback = out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let summary = match parsed.and_then(|c| thread_count(threads).map(|t| (c, t))) {
                Err(e) => invalid_config(&e, &fallback),
                Ok((mut cfg, threads)) => {
                    if let Some(s) = seed_override {
                        cfg.rng_seed = Some(s);
                    }
                    let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or(fallback);
                    run(&cfg, &dir, threads)
                }
            };
            match &summary.error {
                Some(e) => eprintln!("{}: {} error: {}", summary.status, e.kind, e.message),
                None => eprintln!("ok: {} checks passed", summary.checks.len()),
            }
            ExitCode::from(summary.exit_code as u8)
        }
    }
}
