//! `treecoder` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data/format/I-O
//! error, 3 training divergence. Diagnostics go to stderr; results go to files
//! (or stdout for `eval` without `--out`).

pub mod checkpoint;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::autoencoder::{evaluate, train, AutoencoderPair, EpochRecord, ErrorScale, TrainConfig, TrainObserver};
use crate::baseline_mlp::{stacked_train, train_perceptron};
use crate::data_io::{self, Dataset, Vocabulary};
use crate::error::{Error, Result};
use crate::reporting::{self, LeafSnapshotter};
use crate::soft_tree::LeafKind;

pub use checkpoint::{load_model, save_model, Checkpoint};

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "TREECODER_THREADS";

#[derive(Debug, Parser)]
#[command(name = "treecoder", version, about = "Soft decision tree autoencoders")]
struct Cli {
    /// Worker threads for evaluation and encoding (training stays sequential).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Suppress per-epoch progress on stderr.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an encoder/decoder tree pair.
    Train(TrainArgs),
    /// Report reconstruction RMSE of a saved model.
    Eval(ModelDataArgs),
    /// Write latent codes of a dataset.
    Encode(ModelDataArgs),
    /// Write reconstructions of a dataset.
    Reconstruct(ModelDataArgs),
    /// Export figure data.
    Export(ExportArgs),
    /// Train a perceptron autoencoder baseline.
    Baseline(BaselineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataFormat {
    Idx,
    Csv,
    TextLines,
    TextFiles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Args)]
struct DataArgs {
    #[arg(long, value_enum, default_value = "idx")]
    data_format: DataFormat,
    #[arg(long)]
    train_images: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    #[arg(long)]
    train_csv: Option<PathBuf>,
    #[arg(long)]
    test_csv: Option<PathBuf>,
    /// Text corpus: a file with one document per line, or a directory with
    /// one document per file (first-level subdirectories are categories).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Seed of the train/test shuffle for text corpora.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = 0.6)]
    train_fraction: f64,
    /// Keep only the first N training instances.
    #[arg(long)]
    limit_train: Option<usize>,
    /// Keep only the first N test instances.
    #[arg(long)]
    limit_test: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 2)]
    latent: usize,
    #[arg(long, default_value_t = 6)]
    max_depth: usize,
    #[arg(long, default_value = "constant")]
    leaf: LeafKind,
    #[arg(long, default_value_t = 240)]
    epochs: usize,
    #[arg(long, default_value_t = 40)]
    grow_every: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 0.01)]
    gate_init: f64,
    #[arg(long, default_value_t = 0.1)]
    leaf_init: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch error curve CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Vocabulary TSV output (text formats only).
    #[arg(long)]
    vocab_out: Option<PathBuf>,
    /// Write decoder leaf images before every growth step and at the end.
    #[arg(long)]
    snapshot_leaves: Option<String>,
    #[arg(long, default_value_t = 28)]
    image_rows: usize,
    #[arg(long, default_value_t = 28)]
    image_cols: usize,
}

#[derive(Debug, Args)]
struct ModelDataArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Which split to process (defaults to test when one is available).
    #[arg(long, value_enum)]
    split: Option<Split>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportKind {
    Curve,
    Scatter,
    Leaves,
    Histograms,
    Topwords,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TreeChoice {
    Encoder,
    Decoder,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long, value_enum)]
    kind: ExportKind,
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    split: Option<Split>,
    /// Training log to re-export (curve).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Output file (all kinds except leaves).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output path prefix (leaves).
    #[arg(long)]
    out_prefix: Option<String>,
    #[arg(long, default_value_t = 28)]
    rows: usize,
    #[arg(long, default_value_t = 28)]
    cols: usize,
    #[arg(long, value_enum, default_value = "encoder")]
    tree: TreeChoice,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    top_n: usize,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaselineKind {
    Single,
    Stacked,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(value_enum)]
    kind: BaselineKind,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 2)]
    latent: usize,
    #[arg(long, default_value_t = 240)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    log: Option<PathBuf>,
    /// Model weights as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Train/test data after loading and vectorisation.
struct LoadedData {
    train: Option<Dataset>,
    test: Option<Dataset>,
    vocab: Option<Vocabulary>,
}

impl LoadedData {
    fn pick(self, split: Option<Split>) -> Result<Dataset> {
        let chosen = match split {
            Some(Split::Train) => self.train,
            Some(Split::Test) => self.test,
            None => self.test.or(self.train),
        };
        chosen.ok_or_else(|| Error::Config("no data for the requested split".into()))
    }
}

fn require<'a>(opt: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    opt.as_deref()
        .ok_or_else(|| Error::Config(format!("--{flag} is required for this data format")))
}

fn limited(data: Dataset, limit: Option<usize>) -> Dataset {
    match limit {
        Some(n) if n < data.len() => data.subset(&(0..n).collect::<Vec<_>>()),
        _ => data,
    }
}

fn load_idx_pair(images: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let data = data_io::load_idx_images(images)?;
    match labels {
        Some(l) => data.with_labels(data_io::load_idx_labels(l)?),
        None => Ok(data),
    }
}

fn load_data(args: &DataArgs, need_train: bool) -> Result<LoadedData> {
    let mut loaded = match args.data_format {
        DataFormat::Idx => {
            let train = match (&args.train_images, need_train) {
                (Some(p), _) => Some(load_idx_pair(p, args.train_labels.as_deref())?),
                (None, true) => return Err(Error::Config("--train-images is required".into())),
                (None, false) => None,
            };
            let test = args
                .test_images
                .as_deref()
                .map(|p| load_idx_pair(p, args.test_labels.as_deref()))
                .transpose()?;
            LoadedData {
                train,
                test,
                vocab: None,
            }
        }
        DataFormat::Csv => {
            let train = match (&args.train_csv, need_train) {
                (Some(p), _) => Some(data_io::load_csv_dataset(p)?),
                (None, true) => return Err(Error::Config("--train-csv is required".into())),
                (None, false) => None,
            };
            let test = args.test_csv.as_deref().map(data_io::load_csv_dataset).transpose()?;
            LoadedData {
                train,
                test,
                vocab: None,
            }
        }
        DataFormat::TextLines | DataFormat::TextFiles => {
            let path = require(&args.corpus, "corpus")?;
            let corpus = if args.data_format == DataFormat::TextLines {
                data_io::load_corpus_lines(path)?
            } else {
                data_io::load_corpus_dir(path)?
            };
            let tokens = corpus.tokenized();
            let (train_idx, test_idx) = data_io::train_test_split(tokens.len(), args.train_fraction, args.split_seed);
            let pick = |idx: &[usize]| idx.iter().map(|&i| tokens[i].clone()).collect::<Vec<_>>();
            let (train_docs, test_docs) = (pick(&train_idx), pick(&test_idx));
            let vocab = data_io::build_bow_vocabulary(&train_docs)?;
            let label = |data: Dataset, idx: &[usize]| match &corpus.labels {
                Some(l) => data.with_labels(idx.iter().map(|&i| l[i]).collect()),
                None => Ok(data),
            };
            let train = label(data_io::vectorize_documents(&train_docs, &vocab)?, &train_idx)?;
            let test = if test_docs.is_empty() {
                None
            } else {
                Some(label(data_io::vectorize_documents(&test_docs, &vocab)?, &test_idx)?)
            };
            LoadedData {
                train: Some(train),
                test,
                vocab: Some(vocab),
            }
        }
    };
    loaded.train = loaded.train.map(|d| limited(d, args.limit_train));
    loaded.test = loaded.test.map(|d| limited(d, args.limit_test));
    Ok(loaded)
}

fn scale_for(data: &Dataset) -> ErrorScale {
    if data.dim_scale().is_some() {
        ErrorScale::WordMaxCount
    } else {
        ErrorScale::Pixel
    }
}

struct Progress {
    quiet: bool,
}

impl TrainObserver for Progress {
    fn on_epoch(&mut self, r: &EpochRecord, _pair: &AutoencoderPair) -> Result<()> {
        if !self.quiet {
            let test = r.test_error.map_or_else(|| "-".to_string(), |t| format!("{t:.6}"));
            eprintln!(
                "epoch {:>4}  depth {}  train {:.6}  test {}",
                r.epoch, r.depth, r.train_error, test
            );
        }
        Ok(())
    }
}

struct Observers<'a>(Vec<&'a mut dyn TrainObserver>);

impl TrainObserver for Observers<'_> {
    fn on_epoch(&mut self, record: &EpochRecord, pair: &AutoencoderPair) -> Result<()> {
        self.0.iter_mut().try_for_each(|o| o.on_epoch(record, pair))
    }

    fn before_growth(&mut self, epoch: usize, pair: &AutoencoderPair) -> Result<()> {
        self.0.iter_mut().try_for_each(|o| o.before_growth(epoch, pair))
    }
}

fn cmd_train(args: TrainArgs, quiet: bool) -> Result<()> {
    let cfg = TrainConfig {
        total_epochs: args.epochs,
        grow_every: args.grow_every,
        max_depth: args.max_depth,
        learning_rate: args.learning_rate,
        l2_strength: args.l2,
        noise_scale: args.noise,
        gate_init_scale: args.gate_init,
        leaf_init_scale: args.leaf_init,
        seed: args.seed,
        leaf_kind: args.leaf,
        latent_dim: args.latent,
    };
    cfg.validate()?;
    let data = load_data(&args.data, true)?;
    let train_set = data.train.as_ref().expect("training data loaded");
    if let (Some(path), Some(vocab)) = (&args.vocab_out, &data.vocab) {
        vocab.save(path)?;
    }

    let mut pair = AutoencoderPair::initialize(train_set.dim(), &cfg)?;
    let mut progress = Progress { quiet };
    let mut snapshots = args
        .snapshot_leaves
        .as_ref()
        .map(|p| LeafSnapshotter::new(p.clone(), args.image_rows, args.image_cols));
    let mut observers = Observers(vec![&mut progress]);
    if let Some(s) = snapshots.as_mut() {
        observers.0.push(s);
    }
    let history = train(&mut pair, train_set, data.test.as_ref(), &cfg, &mut observers)?;
    if let Some(s) = snapshots.as_mut() {
        s.snapshot(&pair)?;
    }

    save_model(&pair, &cfg, &args.out)?;
    if let Some(log) = &args.log {
        reporting::export_error_curve(&history, log)?;
    }
    Ok(())
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_eval(args: ModelDataArgs) -> Result<()> {
    let pair = load_model(&args.model)?;
    let split = args.split;
    let data = load_data(&args.data, false)?.pick(split)?;
    let rmse = evaluate(&pair, &data, scale_for(&data))?;
    let name = match split {
        Some(Split::Train) => "train",
        Some(Split::Test) => "test",
        None => "default",
    };
    write_or_print(
        args.out.as_deref(),
        &format!("split,rmse\n{name},{}\n", reporting::format_real(rmse)),
    )
}

fn cmd_encode(args: ModelDataArgs) -> Result<()> {
    let pair = load_model(&args.model)?;
    let data = load_data(&args.data, false)?.pick(args.split)?;
    let out = args.out.ok_or_else(|| Error::Config("--out is required".into()))?;
    reporting::export_latent_scatter(&pair, &data, out)
}

fn cmd_reconstruct(args: ModelDataArgs) -> Result<()> {
    let pair = load_model(&args.model)?;
    let data = load_data(&args.data, false)?.pick(args.split)?;
    let out = args.out.ok_or_else(|| Error::Config("--out is required".into()))?;
    reporting::export_reconstructions(&pair, &data, out)
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let out = || {
        args.out
            .clone()
            .ok_or_else(|| Error::Config("--out is required".into()))
    };
    let model = || -> Result<AutoencoderPair> {
        load_model(
            args.model
                .as_ref()
                .ok_or_else(|| Error::Config("--model is required".into()))?,
        )
    };
    let data = || load_data(&args.data, false)?.pick(args.split);
    match args.kind {
        ExportKind::Curve => {
            let log = args
                .log
                .as_ref()
                .ok_or_else(|| Error::Config("--log is required".into()))?;
            reporting::export_error_curve(&reporting::read_error_curve(log)?, out()?)
        }
        ExportKind::Scatter => reporting::export_latent_scatter(&model()?, &data()?, out()?),
        ExportKind::Leaves => {
            let prefix = args
                .out_prefix
                .as_ref()
                .ok_or_else(|| Error::Config("--out-prefix is required".into()))?;
            reporting::export_decoder_leaf_images(&model()?.decoder, args.rows, args.cols, prefix).map(|_| ())
        }
        ExportKind::Histograms => {
            let pair = model()?;
            let data = data()?;
            let counts = match args.tree {
                TreeChoice::Encoder => reporting::compute_soft_class_counts(&pair.encoder, &data)?,
                TreeChoice::Decoder => {
                    let mut codes = Vec::with_capacity(data.len() * pair.latent_dim());
                    for x in data.rows() {
                        codes.extend(pair.encode(x)?);
                    }
                    let labels = data
                        .labels()
                        .ok_or_else(|| Error::Input("histograms need labelled data".into()))?
                        .to_vec();
                    let codes = Dataset::new(pair.latent_dim(), codes)?.with_labels(labels)?;
                    reporting::compute_soft_class_counts(&pair.decoder, &codes)?
                }
            };
            let path = out()?;
            fs::write(&path, counts.render()).map_err(|e| Error::io(&path, e))
        }
        ExportKind::Topwords => {
            let vocab_path = args
                .vocab
                .as_ref()
                .ok_or_else(|| Error::Config("--vocab is required".into()))?;
            let vocab = Vocabulary::load(vocab_path)?;
            reporting::export_top_words_per_leaf(&model()?.decoder, &vocab, args.top_n, out()?)
        }
        ExportKind::Grid => reporting::export_reconstruction_grid(
            &model()?,
            &data()?,
            args.samples,
            args.rows,
            args.cols,
            args.seed,
            out()?,
        ),
    }
}

fn cmd_baseline(args: BaselineArgs) -> Result<()> {
    let cfg = TrainConfig {
        total_epochs: args.epochs,
        learning_rate: args.learning_rate,
        l2_strength: args.l2,
        seed: args.seed,
        latent_dim: args.latent,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let data = load_data(&args.data, true)?;
    let train_set = data.train.as_ref().expect("training data loaded");
    let (json, history) = match args.kind {
        BaselineKind::Single => {
            let (model, history) = train_perceptron(train_set, data.test.as_ref(), &cfg)?;
            (serde_json::to_string_pretty(&model), history)
        }
        BaselineKind::Stacked => {
            let (model, history) = stacked_train(train_set, data.test.as_ref(), &cfg)?;
            (serde_json::to_string_pretty(&model), history)
        }
    };
    if let Some(path) = &args.out {
        let json = json.map_err(|e| Error::Structural(format!("cannot serialise baseline: {e}")))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))?;
    }
    if let Some(log) = &args.log {
        reporting::export_error_curve(&history, log)?;
    }
    Ok(())
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Diverged { .. } => 3,
        _ => 2,
    }
}

fn thread_count(flag: Option<usize>) -> std::result::Result<Option<usize>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got `{v}`")),
        _ => Ok(None),
    }
}

fn dispatch(command: Command, quiet: bool) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a, quiet),
        Command::Eval(a) => cmd_eval(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Export(a) => cmd_export(a),
        Command::Baseline(a) => cmd_baseline(a),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let threads = match thread_count(cli.threads) {
        Ok(Some(0)) => {
            eprintln!("error: thread count must be positive");
            return 1;
        }
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 1;
        }
    };
    let quiet = cli.quiet;
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command, quiet)),
            Err(e) => {
                eprintln!("error: cannot start thread pool: {e}");
                return 2;
            }
        },
        None => dispatch(cli.command, quiet),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
