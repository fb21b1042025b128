//! Command-line interface.

use std::io::ErrorKind;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{self, Branching, F1Options, TreeEntry, TreeFile};
use crate::checkpoint::Checkpoint;
use crate::data::{self, Dataset, Example, Split};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::ModelKind;
use crate::parallel::Execution;
use crate::training::{self, TrainConfig};

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "LATENT_TREES_DATA";

#[derive(Debug, Parser)]
#[command(name = "latent-trees", version, about = "Latent-tree NLI models and parse analysis")]
pub struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write the best-dev checkpoint.
    Train(Box<TrainArgs>),
    /// Report accuracy of a checkpoint on a split.
    Eval(EvalArgs),
    /// Write the trees a checkpoint induces on a split.
    Induce(InduceArgs),
    /// Write baseline trees for a split.
    Baseline(BaselineArgs),
    /// Tabulate self-F1 and F1 against baselines for a set of tree files.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Directory holding the corpus files (default: $LATENT_TREES_DATA).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<Dataset>,
    #[arg(long, value_enum, default_value = "dev")]
    pub split: Split,
    /// Explicit corpus files, overriding --data-dir/--dataset.
    #[arg(long = "corpus")]
    pub corpus: Vec<PathBuf>,
    /// Use only the first N pairs.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<Dataset>,
    #[arg(long = "train-file")]
    pub train_files: Vec<PathBuf>,
    #[arg(long = "dev-file")]
    pub dev_files: Vec<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub beam_start: Option<usize>,
    #[arg(long)]
    pub beam_end: Option<usize>,
    #[arg(long)]
    pub beam_anneal_epochs: Option<usize>,
    /// Soft CKY selection with this temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub max_length: Option<usize>,
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub dev_limit: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// JSON-lines metrics log.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// JSON-lines per-pair predictions.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InduceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Left,
    Right,
    Random,
    /// The parses provided with the corpus.
    Gold,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub kind: BaselineKind,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Tree files, one per model instance.
    #[arg(required = true)]
    pub trees: Vec<PathBuf>,
    /// Reference parses (e.g. from `baseline --kind gold`).
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Leave out sentences of at most two tokens.
    #[arg(long)]
    pub exclude_short: bool,
    /// Machine-readable report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn data_dir_or_env(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

fn load_split(args: &CorpusArgs, fallback: Option<Dataset>) -> Result<Vec<Example>> {
    let files = if !args.corpus.is_empty() {
        args.corpus.clone()
    } else {
        let dir = data_dir_or_env(args.data_dir.clone()).ok_or_else(|| {
            Error::Config(format!("no corpus: pass --corpus or --data-dir, or set {DATA_DIR_ENV}"))
        })?;
        args.dataset.or(fallback).unwrap_or(Dataset::Snli).files(&dir, args.split)
    };
    let mut examples = data::load_corpus(&files)?;
    if let Some(n) = args.limit {
        examples.truncate(n);
    }
    Ok(examples)
}

/// Defaults, then the config file, then explicit flags.
pub fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut c = match &args.config {
        Some(path) => TrainConfig::from_toml_file(path)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field.clone() { c.$field = v; })*
        };
    }
    set!(model, seed, dim, hidden, learning_rate, batch_size, epochs, beam_start, beam_end,
         beam_anneal_epochs, log_every, checkpoint);
    macro_rules! set_opt {
        ($($field:ident),*) => {
            $(if args.$field.is_some() { c.$field = args.$field.clone(); })*
        };
    }
    set_opt!(embeddings, temperature, clip_norm, max_length, train_limit, dev_limit, metrics, dataset);
    if let Some(dir) = &args.data_dir {
        c.data_dir = Some(dir.clone());
    } else if c.data_dir.is_none() {
        c.data_dir = data_dir_or_env(None);
    }
    if c.dataset.is_none() && c.data_dir.is_some() {
        c.dataset = Some(Dataset::Snli);
    }
    if !args.train_files.is_empty() {
        c.train_files = args.train_files.clone();
    }
    if !args.dev_files.is_empty() {
        c.dev_files = args.dev_files.clone();
    }
    c.validate()?;
    Ok(c)
}

#[derive(Serialize)]
struct Prediction<'a> {
    pair_id: &'a str,
    gold: &'a str,
    predicted: &'a str,
}

fn cmd_train(args: &TrainArgs, exec: Execution) -> Result<()> {
    let config = resolve_config(args)?;
    let outcome = training::train(&config, exec)?;
    for m in &outcome.metrics {
        if let Some(acc) = m.dev_acc {
            eprintln!(
                "epoch {} step {} loss {:.4} train {:.1} dev {:.1} beam {}",
                m.epoch,
                m.step,
                m.loss,
                100.0 * m.train_acc,
                100.0 * acc,
                m.beam_width
            );
        }
    }
    let ck = &outcome.checkpoint;
    println!(
        "checkpoint {} (epoch {}, dev accuracy {})",
        config.checkpoint.display(),
        ck.epoch,
        ck.dev_accuracy.map_or("-".into(), |a| format!("{:.1}", 100.0 * a))
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs, exec: Execution) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let examples = load_split(&args.corpus, ck.config.dataset)?;
    let eval = training::evaluate(&ck, &examples, exec)?;
    if let Some(path) = &args.out {
        let mut out = String::new();
        for (e, p) in examples.iter().zip(&eval.predictions) {
            let rec = Prediction {
                pair_id: &e.pair_id,
                gold: e.label.as_str(),
                predicted: p.as_str(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("prediction serializes"));
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())?;
    }
    println!("accuracy {:.1} ({} pairs)", 100.0 * eval.accuracy, examples.len());
    Ok(())
}

fn cmd_induce(args: &InduceArgs, exec: Execution) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let examples = load_split(&args.corpus, ck.config.dataset)?;
    let eval = training::evaluate(&ck, &examples, exec)?;
    let mut entries = Vec::with_capacity(2 * examples.len());
    for (e, (pt, ht)) in examples.iter().zip(eval.trees) {
        for (side, tokens, tree) in [
            (analysis::Side::Premise, &e.premise, pt),
            (analysis::Side::Hypothesis, &e.hypothesis, ht),
        ] {
            entries.push(TreeEntry {
                pair_id: e.pair_id.clone(),
                side,
                tokens: tokens.clone(),
                tree,
            });
        }
    }
    TreeFile { entries }.write(&args.out)?;
    eprintln!("wrote {} trees to {}", 2 * examples.len(), args.out.display());
    Ok(())
}

fn cmd_baseline(args: &BaselineArgs) -> Result<()> {
    let examples = load_split(&args.corpus, None)?;
    let file = match args.kind {
        BaselineKind::Left => TreeFile::from_examples(&examples, |n| {
            analysis::branching_tree(Branching::Left, n)
        }),
        BaselineKind::Right => TreeFile::from_examples(&examples, |n| {
            analysis::branching_tree(Branching::Right, n)
        }),
        BaselineKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            TreeFile::from_examples(&examples, |n| analysis::random_tree(n, &mut rng))
        }
        BaselineKind::Gold => TreeFile::gold(&examples)?,
    };
    file.write(&args.out)?;
    eprintln!("wrote {} trees to {}", file.len(), args.out.display());
    Ok(())
}

fn cmd_compare(args: &CompareArgs, exec: Execution) -> Result<()> {
    let models = args
        .trees
        .iter()
        .map(|p| TreeFile::read(p))
        .collect::<Result<Vec<_>>>()?;
    let gold = args.gold.as_deref().map(TreeFile::read).transpose()?;
    let opts = F1Options {
        exclude_short: args.exclude_short,
        exec,
    };
    let report = analysis::report(&models, gold.as_ref(), opts)?;
    print!("{report}");
    if let Some(path) = &args.out {
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write_atomic(path, json.as_bytes())?;
    }
    Ok(())
}

fn is_usage_error(e: &Error) -> bool {
    match e {
        Error::Config(_) => true,
        Error::Io { source, .. } => source.kind() == ErrorKind::NotFound,
        _ => false,
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match &cli.command {
        Command::Train(a) => cmd_train(a, exec),
        Command::Eval(a) => cmd_eval(a, exec),
        Command::Induce(a) => cmd_induce(a, exec),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Compare(a) => cmd_compare(a, exec),
    }
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code: 0 on success, 2 for usage errors, 1 otherwise.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if is_usage_error(&e) {
                2
            } else {
                1
            }
        }
    }
}
