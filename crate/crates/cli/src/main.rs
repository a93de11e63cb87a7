//! `vgembed`: train the grounding model, export grounded vectors and score
//! them.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure (divergence, or a gradient check over its threshold).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod exit;

use config::{FileConfig, Format};
use exit::CliError;

#[derive(Parser, Debug)]
#[command(name = "vgembed", version, about = "Visually grounded word embeddings")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

/// Flags every command accepts.
#[derive(Args, Debug, Clone, Default)]
pub struct Global {
    /// Flat JSON file with default values for any flag (keys use underscores)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for checkpoints, logs and exported vectors
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the model on image-caption pairs
    Train(TrainArgs),
    /// Map a whole embedding file through a trained checkpoint
    Ground(GroundArgs),
    /// Spearman correlation on word-similarity datasets
    EvalIntrinsic(IntrinsicArgs),
    /// Pearson correlation on sentence-similarity datasets
    EvalSts(StsArgs),
    /// Nearest neighbors by cosine
    Neighbors(NeighborArgs),
    /// Compare analytic and finite-difference gradients on a tiny model
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Pre-trained embeddings in text format
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Read only the first N embedding rows
    #[arg(long)]
    pub embed_limit: Option<usize>,
    /// JSON-lines captions: {"image_id": ..., "caption": ...}
    #[arg(long)]
    pub train_captions: Option<PathBuf>,
    /// Held-out captions driving early stopping
    #[arg(long)]
    pub val_captions: Option<PathBuf>,
    /// Image feature vectors, one `image_id v1 ... vp` per line
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Keep the N most frequent caption words that have embeddings [default: 10000]
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Grounded width c [default: 1024]
    #[arg(long)]
    pub grounded_dim: Option<usize>,
    /// Image projector hidden width [default: grounded dim]
    #[arg(long)]
    pub projector_dim: Option<usize>,
    /// [default: 256]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// NAdam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 20]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without validation improvement before stopping [default: 5]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Regularizer weight [default: 0.001]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Regularizer target cosine [default: 1]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Keep the textual embeddings fixed
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub freeze_embeddings: Option<bool>,
    /// Comma-separated task losses: fw, bw, bin [default: fw,bw,bin]
    #[arg(long)]
    pub loss_mask: Option<String>,
    /// Add the embedding regularizer to the loss [default: true]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub reg_enabled: Option<bool>,
}

#[derive(Args, Debug)]
pub struct GroundArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Embeddings to ground (any vocabulary of the checkpoint's width)
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub embed_limit: Option<usize>,
    /// Output file [default: <out-dir>/grounded.txt]
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Use the fine-tuned rows for words of the training vocabulary
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub fine_tuned_rows: Option<bool>,
}

#[derive(Args, Debug)]
pub struct IntrinsicArgs {
    /// Word-similarity files (`word1<TAB>word2<TAB>score[<TAB>pos<TAB>quartile<TAB>hard]`)
    pub datasets: Vec<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub embed_limit: Option<usize>,
    /// Also score POS, concreteness-quartile and hard-pair subsets
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub categories: Option<bool>,
    /// Score the concatenation [(1-alpha)G ; alpha V] instead of --embeddings
    #[arg(long, num_args = 3, value_names = ["G", "V", "ALPHA"])]
    pub concat: Option<Vec<String>>,
}

#[derive(Args, Debug)]
pub struct StsArgs {
    /// Sentence-pair files (`score<TAB>sentence1<TAB>sentence2`)
    pub datasets: Vec<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub embed_limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct NeighborArgs {
    /// Query words
    #[arg(required = true)]
    pub words: Vec<String>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub embed_limit: Option<usize>,
    /// Neighbors per word [default: 10]
    #[arg(short, long)]
    pub k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Fail when the max relative error reaches this value [default: 1e-6]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Double the analytic gradients; the check must then fail
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub corrupt_grad: Option<bool>,
    /// Initial finite-difference step [default: 0.01]
    #[arg(long)]
    pub step: Option<f64>,
    /// [default: 12]
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// [default: 5]
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// [default: 6]
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// [default: 7]
    #[arg(long)]
    pub grounded_dim: Option<usize>,
    /// [default: grounded dim]
    #[arg(long)]
    pub projector_dim: Option<usize>,
    /// Captions in the probe batch [default: 3]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [default: 0.5]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// [default: 1]
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub loss_mask: Option<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.global.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let g = &cli.global;
    match &cli.command {
        Command::Train(a) => commands::train(g, a, &file),
        Command::Ground(a) => commands::ground(g, a, &file),
        Command::EvalIntrinsic(a) => commands::eval_intrinsic(g, a, &file),
        Command::EvalSts(a) => commands::eval_sts(g, a, &file),
        Command::Neighbors(a) => commands::neighbors(g, a, &file),
        Command::Gradcheck(a) => commands::gradcheck(g, a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.code)
        }
    }
}
