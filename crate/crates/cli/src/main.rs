use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use grating_cli::config::parse_config;
use grating_cli::run::{run, RunOptions};

/// Grating scattering runs driven by a TOML config.
#[derive(Parser, Debug)]
#[command(name = "grating", version)]
struct Args {
    /// Run file (TOML), or a JSON manifest from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output.directory`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads for sweeps and Monte Carlo runs.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let opts = RunOptions {
        out_dir: args.out_dir,
        threads: args.threads,
        seed: args.seed,
    };
    let outcome = parse_config(&args.config).and_then(|c| run(&c, &opts));
    match outcome {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report.manifest).expect("manifest serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
