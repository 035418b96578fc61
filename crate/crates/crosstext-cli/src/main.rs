//! Command-line front end: one subcommand per pipeline stage, reproducible
//! runs with manifests, exit code 0 on success, 1 on runtime failure, 2 on
//! usage/config errors.

mod manifest;
mod ops;
mod providers;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crosstext::Error;

#[derive(Parser)]
#[command(
    name = "crosstext",
    version,
    about = "Cross-domain image classification through textual descriptions"
)]
struct Cli {
    /// Flat `key = value` config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    providers: providers::ProviderFlags,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct DataFlags {
    /// Line-delimited dataset file.
    #[arg(long)]
    dataset: PathBuf,
    /// Category-set file, one name per line.
    #[arg(long)]
    categories: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
struct TrainFlags {
    /// Learning rate (default 0.001).
    #[arg(long)]
    lr: Option<f64>,
    /// Batch size (default 128).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Source finetuning steps (default 100).
    #[arg(long)]
    steps: Option<usize>,
    /// Epochs per pseudo-label round (default 2).
    #[arg(long)]
    uda_epochs: Option<usize>,
    /// Learning rate for pseudo-label rounds (default: same as --lr).
    #[arg(long)]
    uda_lr: Option<f64>,
    /// Decoupled weight decay (default 0).
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Batch shuffle seed (default 0).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
struct ModelFlags {
    /// Hashed prompt-feature dimension (default 65536).
    #[arg(long)]
    feat_dim: Option<usize>,
    /// Adapter rank (default 8).
    #[arg(long)]
    rank: Option<usize>,
    /// Adapter scale alpha (default 16).
    #[arg(long)]
    alpha: Option<f64>,
    /// Model initialization seed (default 0).
    #[arg(long)]
    init_seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
struct PromptFlags {
    /// Template variant: standard | domain-aware | simple.
    #[arg(long)]
    variant: Option<String>,
    /// Beam width for generation (default 4).
    #[arg(long)]
    beam_width: Option<usize>,
    /// Generation token budget (default 16).
    #[arg(long)]
    max_tokens: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build (or load from cache) the embedding index over a vocabulary.
    IndexVocab {
        /// Vocabulary file, one text per line.
        #[arg(long)]
        vocab: PathBuf,
        /// Vocabulary kind: tag | attribute.
        #[arg(long)]
        kind: String,
        /// For attribute vocabularies: generate the file from this tag list
        /// via the attribute provider when it does not exist yet.
        #[arg(long)]
        generate_from: Option<PathBuf>,
    },
    /// Build descriptions for samples that lack them and emit the described
    /// dataset.
    Extract {
        #[command(flatten)]
        data: DataFlags,
        /// Tag vocabulary file.
        #[arg(long)]
        tag_vocab: PathBuf,
        /// Attribute vocabulary file.
        #[arg(long)]
        attr_vocab: PathBuf,
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
        /// Top tags per image (default 5).
        #[arg(long)]
        k: Option<usize>,
        /// Top attributes per image (default 5).
        #[arg(long)]
        m: Option<usize>,
        /// Captions per image (default 5).
        #[arg(long)]
        n: Option<usize>,
        /// Rebuild descriptions even where present.
        #[arg(long)]
        overwrite: bool,
    },
    /// Validate a dataset and emit it in the canonical text format.
    BuildDataset {
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finetune the reference model on merged source domains.
    FinetuneDg {
        #[command(flatten)]
        data: DataFlags,
        /// Held-out domain to exclude from training.
        #[arg(long)]
        target: Option<String>,
        /// Run directory for the checkpoint and manifest.
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        prompt: PromptFlags,
    },
    /// Source finetuning plus pseudo-label adaptation rounds.
    UdaRun {
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        /// Pseudo-label rounds (default 1).
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        prompt: PromptFlags,
    },
    /// Generative classification over a dataset (prediction log output).
    Classify {
        #[command(flatten)]
        data: DataFlags,
        /// Restrict to one domain.
        #[arg(long)]
        domain: Option<String>,
        /// Resolve unmatched answers by rank classification.
        #[arg(long)]
        fallback: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        prompt: PromptFlags,
    },
    /// Rank classification over a dataset (prediction log output).
    RankClassify {
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        domain: Option<String>,
        /// Divide each category total by its token count (study mode).
        #[arg(long)]
        length_normalize: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        prompt: PromptFlags,
    },
    /// Leave-one-out evaluation: train on all other domains, test on each
    /// target in turn (or a single --target).
    EvaluateDg {
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        prompt: PromptFlags,
    },
    /// Source->target adaptation over every ordered domain pair.
    EvaluateUda {
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        prompt: PromptFlags,
    },
    /// Analysis reports.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Response-cache maintenance.
    #[command(subcommand)]
    Cache(CacheCommand),
    /// Dataset statistics.
    Stats {
        #[command(flatten)]
        data: DataFlags,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Per-domain word frequency per sample over rendered descriptions.
    Freq {
        #[command(flatten)]
        data: DataFlags,
        /// Comma-separated words (phrases allowed).
        #[arg(long)]
        words: String,
        /// Optional TSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top sensitive description words for one sample (reference model
    /// only).
    Sensitivity {
        #[command(flatten)]
        data: DataFlags,
        /// Sample id to analyze.
        #[arg(long)]
        id: String,
        /// Words to report (default 10).
        #[arg(long)]
        top_n: Option<usize>,
        #[command(flatten)]
        prompt: PromptFlags,
    },
    /// Export embeddings as TSV for external projection tools.
    Embeddings {
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        domain: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CacheCommand {
    /// Scan the cache, evicting corrupt entries and stray temp files.
    Gc {
        /// Cache root (defaults to --cache).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match ops::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = serde_json::json!({ "kind": e.kind(), "message": e.to_string() });
            eprintln!("error: {payload}");
            match e {
                Error::Arg(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
