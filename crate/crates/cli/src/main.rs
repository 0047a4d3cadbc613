mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stochsr_core::Error;

/// Stochastic-attribute face super-resolution pipeline.
///
/// The STOCHSR_SEED environment variable overrides the config-file seed;
/// explicit --set seed=... flags override both.
#[derive(Parser)]
#[command(name = "stochsr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Phase {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Study {
    Benchmark,
    Sampling,
    Traversal,
    Residual,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset (HR/LR image pairs plus a manifest).
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of images; 300 matches the evaluation-split convention.
        #[arg(long, default_value_t = 300)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 8)]
        scale: usize,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Run the two-phase training procedure.
    Train {
        /// Flat key=value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override single config keys, e.g. --set lambda=2.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long, value_enum, default_value = "all")]
        phase: Phase,
        /// Dataset manifest (overrides the config `data` key).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory (overrides the config `out_dir` key).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume from a checkpoint instead of initializing fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render a super-resolved image from a checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input image (bicubic-upsampled LR, at the configured size).
        #[arg(long)]
        input: PathBuf,
        /// mean | sample:K | deterministic
        #[arg(long, default_value = "mean")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an evaluation study over a dataset split. The benchmark study
    /// accepts repeated --data (one split per scale) with matching repeated
    /// --checkpoint flags to emit one table row per scale.
    Eval {
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long, value_enum)]
        study: Study,
        #[arg(long)]
        out: PathBuf,
        /// Benchmark only the model-free bicubic column.
        #[arg(long, default_value_t = false)]
        bicubic_only: bool,
        /// Samples for per-sample studies (traversal, residual).
        #[arg(long, default_value_t = 4)]
        samples: usize,
        /// Traversal frame count.
        #[arg(long, default_value_t = 8)]
        steps: usize,
        /// Sampling-study draw counts.
        #[arg(long, default_value = "10,100,1000")]
        draws: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a checkpoint's manifest: config, tensors, shapes, checksums.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Exit codes: 0 success, 2 configuration/usage error, 3 data error,
/// 4 numerical abort.
fn exit_code_for(err: &Error) -> u8 {
    use stochsr_tensor::TensorError;
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io { .. } | Error::Checkpoint(_) => 3,
        Error::NumericalAbort { .. } => 4,
        Error::Tensor(TensorError::NonFinite { .. }) => 4,
        Error::Tensor(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            out,
            seed,
            count,
            size,
            scale,
            split,
        } => commands::gen_data(&out, seed, count, size, scale, &split),
        Command::Train {
            config,
            sets,
            phase,
            data,
            out,
            resume,
        } => commands::train(config.as_deref(), &sets, phase, data, out, resume),
        Command::Infer {
            checkpoint,
            input,
            mode,
            out,
            seed,
        } => commands::infer(&checkpoint, &input, &mode, &out, seed),
        Command::Eval {
            checkpoint,
            data,
            study,
            out,
            bicubic_only,
            samples,
            steps,
            draws,
            seed,
        } => commands::eval(
            &checkpoint,
            &data,
            study,
            &out,
            bicubic_only,
            samples,
            steps,
            &draws,
            seed,
        ),
        Command::Inspect { checkpoint } => commands::inspect(&checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
