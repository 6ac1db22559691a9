use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use astpath::abstraction::AbstractionKind;
use astpath::corpus::{DigestAlgorithm, Split};
use astpath::pipeline::{self, Inference, Learner, PipelineError, RunConfig};
use astpath::tasks::TaskKind;

/// Path-based representations of programs: extraction, training and
/// evaluation of name and type predictors.
#[derive(Parser)]
#[command(name = "astpath", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Scan a corpus directory, drop duplicates and assign splits.
    Manifest,
    /// Write path-context shards, instance files and statistics.
    Extract,
    /// Train a model on the train split.
    Train,
    /// Predict names or types for the evaluation split.
    Predict,
    /// Score a predictions file.
    Evaluate,
    /// Train and evaluate over a parameter grid.
    Ablate,
    /// Generate the synthetic separability corpus.
    Synth,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Manifest => "manifest",
            Command::Extract => "extract",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
            Command::Synth => "synth",
        }
    }
}

#[derive(Args, Default)]
struct Opts {
    /// TOML file with run settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory that receives run directories.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Run directory of a `train` run.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true)]
    predictions: Option<PathBuf>,
    /// variable-names, method-names or full-types.
    #[arg(long, global = true)]
    task: Option<TaskKind>,
    #[arg(long, global = true)]
    abstraction: Option<AbstractionKind>,
    /// crf or sgns.
    #[arg(long, global = true)]
    learner: Option<Learner>,
    #[arg(long, global = true)]
    max_length: Option<usize>,
    #[arg(long, global = true)]
    max_width: Option<usize>,
    /// Also extract paths from each terminal to its ancestors.
    #[arg(long, global = true)]
    semi_paths: bool,
    #[arg(long, global = true)]
    keep_prob: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    split_seed: Option<u64>,
    /// xxh3-128 or md5.
    #[arg(long, global = true)]
    digest: Option<DigestAlgorithm>,
    #[arg(long, global = true)]
    kappa: Option<f64>,
    /// greedy or exact.
    #[arg(long, global = true)]
    inference: Option<Inference>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    /// Method names: only paths inside the method body.
    #[arg(long, global = true)]
    internal_only: bool,
    #[arg(long, global = true)]
    eval_split: Option<Split>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Number of programs for `synth`.
    #[arg(long, global = true)]
    programs: Option<usize>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    negatives: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    min_count: Option<u64>,
    /// Comma-separated abstractions for `ablate`.
    #[arg(long, global = true, value_delimiter = ',')]
    grid_abstractions: Option<Vec<AbstractionKind>>,
    /// Comma-separated keep probabilities for `ablate`.
    #[arg(long, global = true, value_delimiter = ',')]
    grid_keep_probs: Option<Vec<f64>>,
    /// Comma-separated LENGTHxWIDTH pairs for `ablate`, e.g. `7x3,4x1`.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_limits)]
    grid_limits: Option<Vec<(usize, usize)>>,
}

fn parse_limits(s: &str) -> Result<(usize, usize), String> {
    let (l, w) = s.split_once('x').ok_or_else(|| format!("expected LENGTHxWIDTH, got `{s}`"))?;
    Ok((
        l.parse().map_err(|_| format!("bad length in `{s}`"))?,
        w.parse().map_err(|_| format!("bad width in `{s}`"))?,
    ))
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = v;
        }
    };
}

fn resolve(opts: Opts) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    set!(cfg.out, opts.out);
    cfg.corpus = opts.corpus.or(cfg.corpus);
    cfg.manifest = opts.manifest.or(cfg.manifest);
    cfg.model = opts.model.or(cfg.model);
    cfg.predictions = opts.predictions.or(cfg.predictions);
    set!(cfg.task, opts.task);
    set!(cfg.abstraction, opts.abstraction);
    set!(cfg.learner, opts.learner);
    cfg.max_length = opts.max_length.or(cfg.max_length);
    cfg.max_width = opts.max_width.or(cfg.max_width);
    cfg.semi_paths |= opts.semi_paths;
    set!(cfg.keep_prob, opts.keep_prob);
    set!(cfg.seed, opts.seed);
    set!(cfg.split_seed, opts.split_seed);
    set!(cfg.digest, opts.digest);
    set!(cfg.kappa, opts.kappa);
    set!(cfg.inference, opts.inference);
    set!(cfg.top_k, opts.top_k);
    cfg.internal_only |= opts.internal_only;
    set!(cfg.eval_split, opts.eval_split);
    set!(cfg.threads, opts.threads);
    set!(cfg.synth_programs, opts.programs);
    set!(cfg.sgns.dim, opts.dim);
    set!(cfg.sgns.negative_samples, opts.negatives);
    set!(cfg.sgns.epochs, opts.epochs);
    set!(cfg.sgns.learning_rate, opts.learning_rate);
    set!(cfg.sgns.min_count, opts.min_count);
    set!(cfg.ablate.abstractions, opts.grid_abstractions);
    set!(cfg.ablate.keep_probs, opts.grid_keep_probs);
    set!(cfg.ablate.limits, opts.grid_limits);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<PathBuf, PipelineError> {
    let cfg = resolve(cli.opts)?;
    cfg.validate()?;
    log::info!("{} with config hash dir {}", cli.command.name(), cfg.run_dir(cli.command.name()).display());
    match cli.command {
        Command::Manifest => pipeline::cmd_manifest(&cfg),
        Command::Extract => pipeline::cmd_extract(&cfg),
        Command::Train => pipeline::cmd_train(&cfg),
        Command::Predict => pipeline::cmd_predict(&cfg),
        Command::Evaluate => pipeline::cmd_evaluate(&cfg),
        Command::Ablate => pipeline::cmd_ablate(&cfg),
        Command::Synth => pipeline::cmd_synth(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
