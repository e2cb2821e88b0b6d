//! `annot`: synthesize corpora, train annotator models, evaluate them and
//! compare architectures from a TOML run configuration.

mod commands;
mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use annot_core::Error;

#[derive(Parser)]
#[command(
    name = "annot",
    version,
    about = "Multi-annotator classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Global {
    /// Maximum number of concurrent training jobs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out_dir` in the config file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Checkpoint directory for `eval` (default: `<out>/checkpoints`).
    #[arg(long, global = true)]
    pub checkpoints: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its ground-truth sidecar.
    Synth { config: PathBuf },
    /// Train every configured architecture on every fold.
    Train { config: PathBuf },
    /// Evaluate saved checkpoints.
    Eval { config: PathBuf },
    /// Train, evaluate and time every architecture in one go.
    Compare { config: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Conflict { .. } | Error::Argument(_) => 1,
        _ => 2,
    }
}

fn error_record(e: &Error) -> serde_json::Value {
    let mut record = json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": exit_code(e),
    });
    if let Error::Fold {
        iteration,
        fold,
        architecture,
        ..
    } = e
    {
        record["iteration"] = json!(iteration);
        record["fold"] = json!(fold);
        record["architecture"] = json!(architecture);
    }
    record
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out_dir = None;
    let result = match &cli.command {
        Command::Synth { config } => commands::synth(config, &cli.global, &mut out_dir),
        Command::Train { config } => commands::train(config, &cli.global, &mut out_dir),
        Command::Eval { config } => commands::eval(config, &cli.global, &mut out_dir),
        Command::Compare { config } => commands::compare(config, &cli.global, &mut out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = error_record(&e);
            eprintln!("{record}");
            if let Some(dir) = out_dir {
                // best effort: the directory may be the thing that failed
                let _ = fs::create_dir_all(&dir)
                    .and_then(|_| fs::write(dir.join("error.json"), format!("{record:#}\n")));
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
