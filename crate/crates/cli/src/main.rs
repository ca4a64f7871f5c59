//! `tbnet`: data generation, complexity audits, gradient checks, training
//! and evaluation of temporal bilinear networks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tbnet::network::Arch;

#[derive(Parser)]
#[command(name = "tbnet", version, about = "Temporal bilinear networks on synthetic order-sensitive video")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test dataset files.
    Gen(GenArgs),
    /// Print parameter, FLOP and receptive-field counts.
    Audit(AuditArgs),
    /// Run the finite-difference and dense-oracle suites.
    Gradcheck(GradcheckArgs),
    /// Train a model and write logs and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the multi-clip protocol.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct GenArgs {
    /// Existing directory receiving train.tbv and test.tbv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    /// Raw frames per video.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct AuditArgs {
    /// Print the closed-form operator table instead of a network audit.
    #[arg(long)]
    pub table1: bool,
    #[arg(long = "C", default_value_t = 64)]
    pub c: usize,
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    /// Output positions for the closed-form FLOP column.
    #[arg(long, default_value_t = 1)]
    pub q: usize,
    #[arg(long, value_parser = parse_arch, default_value = "c2d")]
    pub arch: Arch,
    #[arg(long, default_value_t = 1)]
    pub width_divisor: usize,
    #[arg(long)]
    pub tb_stages: Option<String>,
    #[arg(long, default_value_t = 400)]
    pub classes: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 112)]
    pub size: usize,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Comma-separated subset of ops.
    #[arg(long)]
    pub ops: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Break a backward rule on purpose (shift_sign).
    #[arg(long)]
    pub fault: Option<String>,
    /// Dense-oracle configurations; 0 skips the oracle suite.
    #[arg(long, default_value_t = 100)]
    pub oracle_configs: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Directory holding train.tbv (and optionally test.tbv).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory for the log, checkpoint and metrics.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<Arch>,
    /// Stages holding bilinear blocks, e.g. res2,res3,res4.
    #[arg(long)]
    pub tb_stages: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub width_divisor: Option<usize>,
    #[arg(long)]
    pub blocks_per_stage: Option<usize>,
    #[arg(long)]
    pub factors: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Single-view test accuracy every this many epochs; 0 disables.
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint file, or a run directory containing checkpoint.ckpt.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory holding test.tbv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Explicit dataset file, instead of --data.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub clips: Option<usize>,
    #[arg(long)]
    pub crops: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse().map_err(|e: tbnet::Error| e.to_string())
}

/// A failed command and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure { code: 2, msg: msg.into() }
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Failure { code: 1, msg: msg.into() }
    }
}

impl From<tbnet::Error> for Failure {
    fn from(e: tbnet::Error) -> Self {
        use std::io::ErrorKind;
        use tbnet::Error as E;
        let code = match &e {
            E::Training { .. } => 1,
            E::Io(io) if !matches!(io.kind(), ErrorKind::NotFound | ErrorKind::PermissionDenied) => 1,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Gen(a) => commands::gen(a),
        Command::Audit(a) => commands::audit(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
