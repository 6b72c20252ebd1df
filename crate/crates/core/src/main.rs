use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ilues_agpr::cli;

#[derive(Parser)]
#[command(name = "ilues-agpr", version, about = "Multimodal Bayesian inversion with ILUES design points and adaptive GP surrogates")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sampler and write samples, iteration log, summary and marginals.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the run seed; the data keep the seed from the file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grid-quadrature reference posterior.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cells per axis.
        #[arg(long)]
        resolution: usize,
    },
    /// Mean, MSE and clusters of a samples file.
    Stats {
        #[arg(long)]
        samples: PathBuf,
    },
    /// Samples against an oracle directory.
    Compare {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        oracle: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match args.command {
        Command::Run { config, out, seed } => cli::run(&config, &out, seed),
        Command::Oracle { config, out, resolution } => cli::oracle(&config, &out, resolution),
        Command::Stats { samples } => cli::stats(&samples),
        Command::Compare { samples, oracle } => cli::compare(&samples, &oracle),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
