//! `advsteg`: embed, extract, attack, train detectors and evaluate.

mod commands;
mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::parse_u64;

#[derive(Parser)]
#[command(name = "advsteg", version, about = "Audio steganography by bounded adversarial perturbation")]
struct Cli {
    /// Run configuration JSON; any field may be omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for clip-level parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Base seed (decimal or 0x-hex); per-clip streams derive from it.
    #[arg(long, global = true, value_parser = parse_u64)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a decoder key file and print its weight digest.
    Keygen(KeygenArgs),
    /// Embed messages into cover WAVs.
    Embed(EmbedArgs),
    /// Recover a message from a stego WAV.
    Extract(ExtractArgs),
    /// Apply one simulated channel attack to a WAV.
    Attack(AttackArgs),
    /// Train a surrogate steganalysis detector on paired covers and stegos.
    TrainDetector(TrainArgs),
    /// Score a stego corpus: PSNR, accuracy under attacks, detector error rates.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
pub struct KeygenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Key seed; falls back to --seed, then to OS entropy.
    #[arg(long, value_parser = parse_u64)]
    key_seed: Option<u64>,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    payload_bps: Option<f64>,
    #[arg(long)]
    message_hex: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Optimize against the attack curriculum.
    #[arg(long)]
    robust: bool,
    /// In-loop detector checkpoint (repeatable).
    #[arg(long = "detector")]
    detectors: Vec<PathBuf>,
    /// Cover WAV files or directories.
    #[arg(required = true)]
    covers: Vec<PathBuf>,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    key: PathBuf,
    #[arg(long, conflicts_with = "payload_bps")]
    message_len: Option<usize>,
    #[arg(long)]
    payload_bps: Option<f64>,
    /// Write message and per-bit probabilities as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Expected message hex; prints the bit accuracy.
    #[arg(long)]
    expect: Option<String>,
    stego: PathBuf,
}

#[derive(Args)]
pub struct AttackArgs {
    /// JSON spec or shorthand such as mp3:128, noise:30, stretch:0.9.
    #[arg(long)]
    spec: String,
    #[arg(long)]
    out: PathBuf,
    input: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    covers: PathBuf,
    #[arg(long)]
    stegos: PathBuf,
    /// Detector variant: a or b.
    #[arg(long, default_value = "a")]
    variant: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV (default: <out>.log.csv).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    covers: PathBuf,
    /// Directory written by `embed`.
    #[arg(long)]
    stegos: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Detector used during embedding (repeatable).
    #[arg(long)]
    in_loop: Vec<PathBuf>,
    /// Detector never seen during embedding (repeatable).
    #[arg(long)]
    held_out: Vec<PathBuf>,
    /// Second stego corpus embedded without the detector term.
    #[arg(long)]
    ablation_stegos: Option<PathBuf>,
    /// Attack to evaluate (repeatable); replaces the configured list.
    #[arg(long = "attack")]
    attacks: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::FAILURE;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let ctx = commands::Context { config_path: cli.config, seed: cli.seed };
    let result = match cli.command {
        Command::Keygen(a) => commands::keygen(&ctx, a),
        Command::Embed(a) => commands::embed(&ctx, a),
        Command::Extract(a) => commands::extract(&ctx, a),
        Command::Attack(a) => commands::attack(&ctx, a),
        Command::TrainDetector(a) => commands::train(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
