mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use synthmask::modelgate::BackendKind;

use crate::commands::Context;
use crate::config::{Overrides, RunConfig, BACKEND_URL_ENV};

const EXIT_VALIDATION: u8 = 2;
const EXIT_BACKEND: u8 = 3;

/// Feature-aware masking and masked-LM infilling for synthetic clinical
/// letters.
#[derive(Debug, Parser)]
#[command(name = "synthmask", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-letter parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    letters: Option<PathBuf>,
    #[arg(long, global = true)]
    annotations: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// mock-echo, mock-dictionary or remote.
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    #[arg(long, global = true)]
    backend_url: Option<String>,
    /// Masking strategy, e.g. `random:0.4` or `hybrid:(pos:noun:0.5,stopwords:0.5)`.
    #[arg(long, global = true)]
    strategy: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    max_lines: Option<usize>,
    #[arg(long, global = true)]
    max_tokens: Option<usize>,
    /// Sample among the best k candidates instead of taking the top one.
    #[arg(long, global = true)]
    top_k_sample: Option<usize>,
    /// Lower-ranked candidates to try after an invalid top candidate.
    #[arg(long, global = true)]
    retry_invalid: Option<u32>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate letters and annotations.
    Ingest {
        /// Also write per-token features.
        #[arg(long)]
        feature_dump: bool,
    },
    /// Sweep max_lines and pick the plateau value.
    ChunkTune,
    /// Mask and infill every letter.
    Generate,
    /// Score synthetic letters against the originals.
    Evaluate {
        /// Generate and score a ratio sweep, e.g. `random:0.0..1.0:0.1`.
        #[arg(long)]
        sweep: Option<String>,
        /// Directory holding the generate outputs (default: output dir).
        #[arg(long)]
        input_dir: Option<PathBuf>,
        #[arg(long)]
        no_bertscore: bool,
        #[arg(long)]
        no_perplexity: bool,
    },
    /// Fill `___` placeholders and correct spelling.
    Postprocess {
        /// Letters CSV to process (default: output dir synthetic letters).
        #[arg(long)]
        input: Option<PathBuf>,
        /// `word<TAB>count` frequency list replacing the bundled one.
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long)]
        max_edit_distance: Option<usize>,
    },
    /// Downstream NER comparison of original and synthetic letters.
    NerEval {
        /// Synthetic letters CSV; generated in memory when absent.
        #[arg(long)]
        synthetic: Option<PathBuf>,
    },
    /// Print the backend's descriptor and capabilities.
    BackendCheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::ChunkTune => "chunk-tune",
            Command::Generate => "generate",
            Command::Evaluate { .. } => "evaluate",
            Command::Postprocess { .. } => "postprocess",
            Command::NerEval { .. } => "ner-eval",
            Command::BackendCheck => "backend-check",
        }
    }
}

fn overrides(cli: &Cli) -> Overrides {
    let mut o = Overrides {
        letters: cli.letters.clone(),
        annotations: cli.annotations.clone(),
        output_dir: cli.output_dir.clone(),
        backend: cli.backend,
        backend_url: cli.backend_url.clone(),
        strategy: cli.strategy.clone(),
        seed: cli.seed,
        max_lines: cli.max_lines,
        max_tokens: cli.max_tokens,
        top_k_sample: cli.top_k_sample,
        retry_invalid: cli.retry_invalid,
        ..Default::default()
    };
    match &cli.command {
        Command::Evaluate {
            sweep,
            no_bertscore,
            no_perplexity,
            ..
        } => {
            o.sweep = sweep.clone();
            o.no_bertscore = *no_bertscore;
            o.no_perplexity = *no_perplexity;
        }
        Command::Postprocess {
            dictionary,
            max_edit_distance,
            ..
        } => {
            o.dictionary = dictionary.clone();
            o.max_edit_distance = *max_edit_distance;
        }
        _ => {}
    }
    o
}

fn run(cli: Cli) -> synthmask::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(synthmask::Error::Validation("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| synthmask::Error::Validation(format!("thread pool: {e}")))?;
    }
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let env_url = std::env::var(BACKEND_URL_ENV).ok();
    let config = file.resolve(overrides(&cli), env_url)?;
    let ctx = Context {
        config,
        command: cli.command.name(),
    };
    match cli.command {
        Command::Ingest { feature_dump } => commands::ingest(&ctx, feature_dump),
        Command::ChunkTune => commands::chunk_tune(&ctx),
        Command::Generate => commands::generate(&ctx),
        Command::Evaluate { input_dir, .. } => commands::evaluate(&ctx, input_dir),
        Command::Postprocess { input, .. } => commands::postprocess(&ctx, input),
        Command::NerEval { synthetic } => commands::ner_eval(&ctx, synthetic),
        Command::BackendCheck => commands::backend_check(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.is_backend() {
                EXIT_BACKEND
            } else {
                EXIT_VALIDATION
            };
            let body = json!({"error": e.kind(), "message": e.to_string(), "exit_code": code});
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
