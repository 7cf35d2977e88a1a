use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use savp::commands;

#[derive(Parser)]
#[command(name = "savp", version, about = "Stochastic video prediction on synthetic sprite scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model, writing checkpoints and losses.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Roll out prior-code samples for every test video.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        n_samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score samples against ground truth.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        best_of: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData { config, out } => commands::gen_data(config, out),
        Command::Train {
            config,
            data,
            out,
            resume,
        } => commands::train(config, data, out, resume.as_deref()),
        Command::Sample {
            ckpt,
            data,
            n_samples,
            out,
        } => commands::sample(ckpt, data, *n_samples, out),
        Command::Eval {
            samples,
            data,
            out,
            best_of,
        } => commands::eval(samples, data, out, *best_of),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
