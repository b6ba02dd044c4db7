use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Partial scene text retrieval on synthetic scenes.
#[derive(Debug, Parser, Serialize)]
#[command(name = "pstr", version)]
pub struct Cli {
    /// Worker threads for evaluation.
    #[arg(long, global = true, env = "PSTR_THREADS", default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a seeded corpus and its query file.
    Gen(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Rank the gallery for every query and write a report.
    Eval(EvalArgs),
    /// Rank the gallery for one query.
    Query(QueryArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

/// Inclusive integer range written `a..b` (or a single number).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Range(pub usize, pub usize);

impl std::str::FromStr for Range {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
        match s.split_once("..") {
            Some((a, b)) => Ok(Range(parse(a)?, parse(b.trim_start_matches('='))?)),
            None => {
                let v = parse(s)?;
                Ok(Range(v, v))
            }
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub scenes: usize,
    /// Lines per scene, inclusive.
    #[arg(long, default_value = "1..3")]
    pub lines: Range,
    #[arg(long, default_value = "abcdefghijklmnopqrstuvwxyz")]
    pub alphabet: String,
    /// Characters per line, inclusive.
    #[arg(long, default_value = "4..10")]
    pub word_len: Range,
    #[arg(long, default_value_t = 0.5)]
    pub jitter: f64,
    /// Point pairs per polygon.
    #[arg(long, default_value_t = 7)]
    pub k: usize,
    #[arg(long, default_value_t = 40)]
    pub tir: usize,
    #[arg(long, default_value_t = 40)]
    pub cpp: usize,
    #[arg(long, default_value_t = 40)]
    pub ncpp: usize,
    /// Corpus file; the query file is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Sequence length T.
    #[arg(long, default_value_t = 15)]
    pub t: usize,
    /// Feature width C.
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    /// Scene feature noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// One of cmsl-a, cmsl-b, cmsl-c, mil, rankmil.
    #[arg(long, default_value = "rankmil")]
    pub strategy: String,
    /// Ranking margin; 0 disables the ranking loss.
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Lines per minibatch.
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Pseudo-labels sampled per line and batch.
    #[arg(long, default_value_t = 2)]
    pub samples_per_line: usize,
    /// Largest bag window in characters (default: whole line).
    #[arg(long)]
    pub n_max: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Checkpoint path; the loss log goes to `<out>.loss.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One of line, bags, dpma.
    #[arg(long, default_value = "dpma")]
    pub matcher: String,
    /// One of tir, ppr, both.
    #[arg(long, default_value = "both")]
    pub task: String,
    /// Seed of the scene feature noise.
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct QueryArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub text: String,
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    #[arg(long, default_value = "dpma")]
    pub matcher: String,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// A strategy name, or `all`.
    #[arg(long, default_value = "all")]
    pub strategy: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random parameter points per strategy.
    #[arg(long, default_value_t = 3)]
    pub points: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 5)]
    pub t: usize,
    #[arg(long, default_value_t = 6)]
    pub dim: usize,
    /// Test hook: perturb the analytic gradient of this tensor.
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}
