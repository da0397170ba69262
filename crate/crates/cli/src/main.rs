//! `cvip`: encode, decode, extract flow, generate data, train, evaluate and
//! benchmark compressed-video two-stream networks.

mod commands;
mod frames;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "cvip", version, about = "Compressed-video two-stream recognition toolkit")]
pub struct Cli {
    /// Worker threads for data generation and flow extraction.
    #[arg(long, global = true, env = "CVIP_THREADS")]
    pub threads: Option<usize>,
    /// Print a human-readable table instead of JSON.
    #[arg(long, global = true)]
    pub pretty: bool,
    /// Also write the JSON report to this file.
    #[arg(long, global = true, value_name = "FILE")]
    pub report: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Encode a PNG sequence or raw RGB24 file as a GVC video.
    Encode(EncodeArgs),
    /// Decode a GVC video to PNG frames.
    Decode(DecodeArgs),
    /// TV-L1 flow between consecutive frames of a GVC video.
    Flow(FlowArgs),
    /// Render the synthetic dataset.
    GenData(GenDataArgs),
    /// Run one training stage, or all of them.
    Train(TrainArgs),
    /// Top-1 accuracy of the I-stream, the P-stream and their fusion.
    Eval(EvalArgs),
    /// Analytic FLOPs or measured videos per second.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeArgs {
    /// Directory of PNG frames (sorted by name) or a raw RGB24 file.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub gop: usize,
    /// Motion search range in pixels.
    #[arg(long, default_value_t = 7)]
    pub range: u16,
    /// Frame width of a raw input.
    #[arg(long)]
    pub width: Option<usize>,
    /// Frame height of a raw input.
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub label: Option<u16>,
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Output directory for `frame_NNNNN.png`.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FlowArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Output directory for `pair_NNNNN.flo`.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.15)]
    pub lambda: f64,
    #[arg(long, default_value_t = 10)]
    pub warps: usize,
    #[arg(long, default_value_t = 30)]
    pub inner: usize,
    #[arg(long, default_value_t = 5)]
    pub levels: usize,
    /// Only the pairs that end on a P-frame.
    #[arg(long)]
    pub p_only: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    /// Clips per class.
    #[arg(long, default_value_t = 25)]
    pub clips: usize,
    #[arg(long, default_value_t = 48)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub gop: usize,
    #[arg(long, default_value_t = 7)]
    pub range: u16,
    #[arg(long, default_value_t = 0.6)]
    pub train_fraction: f64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// mr2d, of2d, distill2d, inflate, distill3d, istream or all.
    #[arg(long)]
    pub stage: String,
    /// Dataset directory or manifest file.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 8.0)]
    pub temperature: f64,
    /// l1 or l2.
    #[arg(long, default_value = "l1")]
    pub feat_norm: String,
    /// 1 to 5, or none.
    #[arg(long, default_value = "3")]
    pub inflate_at: String,
    /// mean or center.
    #[arg(long, default_value = "mean")]
    pub inflation: String,
    #[arg(long, default_value_t = 16)]
    pub segments: usize,
    #[arg(long, default_value_t = 4)]
    pub i_segments: usize,
    #[arg(long, default_value_t = 64)]
    pub crop: usize,
    #[arg(long)]
    pub no_augment: bool,
    /// Checkpoint directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Where earlier stages' checkpoints live, if not in `--out`.
    #[arg(long, value_name = "DIR")]
    pub from: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("stream").required(true).multiple(true).args(["i_ckpt", "p_ckpt"])))]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub i_ckpt: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub p_ckpt: Option<PathBuf>,
    /// `w_i,w_p`.
    #[arg(long, default_value = "1,1")]
    pub fuse_weights: String,
    /// train or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 16)]
    pub segments: usize,
    #[arg(long, default_value_t = 64)]
    pub crop: usize,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("mode").required(true).multiple(true).args(["flops", "vps"])))]
#[command(group(ArgGroup::new("stream").required(true).multiple(true).args(["i_ckpt", "p_ckpt"])))]
pub struct BenchArgs {
    #[arg(long)]
    pub flops: bool,
    #[arg(long, requires = "data")]
    pub vps: bool,
    #[arg(long, value_name = "FILE")]
    pub i_ckpt: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub p_ckpt: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 16)]
    pub segments: usize,
    #[arg(long, default_value_t = 64)]
    pub crop: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": format!("{e:#}") });
            eprintln!("{msg}");
            ExitCode::from(1)
        }
    }
}
