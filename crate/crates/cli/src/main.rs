//! `sts`: train, evaluate and inspect Siamese CNN+LSTM sentence-similarity
//! models.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sts_core::analysis::{self, AblationConfig, OutputFormat};
use sts_core::corpus::{self, DatasetSplit, SentencePair, SplitStrategy};
use sts_core::embeddings::{self, EmbeddingFormat, EmbeddingTable, OovPolicy};
use sts_core::eval::{self, CalibrationModel, DEFAULT_BANDWIDTH};
use sts_core::kernel::AdadeltaConfig;
use sts_core::model::{self, ModelConfig, SiameseModel, TrainConfig, INIT_STDDEV};
use sts_core::ErrorKind;

#[derive(Parser)]
#[command(name = "sts", version, about = "Siamese CNN+LSTM semantic textual similarity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Report pearson, spearman and MSE on one split.
    Evaluate(EvaluateArgs),
    /// Score sentence pairs from a TSV file.
    Predict(PredictArgs),
    /// Cosine distances between the word embeddings of two sentences.
    AnalyzeWords(AnalyzeWordsArgs),
    /// Cosine distances between the local contexts of two sentences.
    AnalyzeContexts(AnalyzeContextsArgs),
    /// Train and evaluate one model per window length.
    Ablate(AblateArgs),
    /// Fit a score calibration on one split and save it.
    Calibrate(CalibrateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum OovArg {
    /// Gaussian vector derived from a hash of the token.
    Hashed,
    Zero,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionArg {
    /// Use the dataset's own split column.
    File,
    /// Slice records in file order.
    Firstn,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum RenderArg {
    Csv,
    Text,
}

impl From<RenderArg> for OutputFormat {
    fn from(r: RenderArg) -> Self {
        match r {
            RenderArg::Csv => OutputFormat::Csv,
            RenderArg::Text => OutputFormat::Text,
        }
    }
}

#[derive(Args, Clone)]
struct EmbeddingArgs {
    /// Word vectors in word2vec text or binary layout.
    #[arg(long)]
    embeddings: PathBuf,
    /// Override format detection.
    #[arg(long, value_enum)]
    embeddings_format: Option<FormatArg>,
    #[arg(long, value_enum, default_value = "hashed")]
    oov: OovArg,
    #[arg(long, default_value_t = 0)]
    oov_seed: u64,
}

impl EmbeddingArgs {
    fn load(&self, keep: Option<&HashSet<String>>) -> Result<EmbeddingTable, CliError> {
        let format = self.embeddings_format.map(|f| match f {
            FormatArg::Text => EmbeddingFormat::Text,
            FormatArg::Binary => EmbeddingFormat::Binary,
        });
        let table = EmbeddingTable::load_filtered(&self.embeddings, format, keep)?;
        let policy = match self.oov {
            OovArg::Hashed => OovPolicy::HashedGaussian(self.oov_seed),
            OovArg::Zero => OovPolicy::ZeroVector,
        };
        Ok(table.with_oov_policy(policy))
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    /// SICK-style TSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// How records are assigned to train/validation/test.
    #[arg(long = "partition", value_enum, default_value = "file")]
    partition: PartitionArg,
    /// Train,validation,test sizes for the firstn partition.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [4927usize, 2000, 3000])]
    split_sizes: Vec<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<DatasetSplit, CliError> {
        let records = corpus::load_sick(&self.data)?;
        let strategy = match self.partition {
            PartitionArg::File => SplitStrategy::FileColumn,
            PartitionArg::Firstn => SplitStrategy::FirstN {
                train: self.split_sizes[0],
                validation: self.split_sizes[1],
                test: self.split_sizes[2],
            },
        };
        Ok(corpus::partition(records, strategy)?)
    }
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Filter-bank window length (odd).
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 300)]
    filters: usize,
    #[arg(long, default_value_t = 50)]
    hidden: usize,
    #[arg(long, default_value_t = INIT_STDDEV)]
    init_stddev: f64,
}

#[derive(Args, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Scale applied to each Adadelta step.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.95)]
    rho: f64,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Clip the global gradient norm to this value.
    #[arg(long)]
    clip: Option<f64>,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    patience: Option<usize>,
    /// Seed for initialisation and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fine-tune a copy of the word vectors.
    #[arg(long)]
    train_embeddings: bool,
    /// Accepted for compatibility; training is always bitwise reproducible.
    #[arg(long)]
    deterministic: bool,
}

impl OptimArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: AdadeltaConfig {
                rho: self.rho,
                epsilon: self.epsilon,
                lr_scale: self.lr,
            },
            shuffle_seed: self.seed,
            clip_norm: self.clip,
            patience: self.patience,
            train_embeddings: self.train_embeddings,
        }
    }

    fn model_config(&self, m: &ModelArgs, embed_dim: usize) -> ModelConfig {
        ModelConfig {
            embed_dim,
            n_filters: m.filters,
            window: m.window,
            hidden: m.hidden,
            seed: self.seed,
            init_stddev: m.init_stddev,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Epoch log CSV; printed to stderr when omitted.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Also fit a calibration on the validation split and save it here.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BANDWIDTH)]
    bandwidth: f64,
    /// Where to write fine-tuned vectors (with --train-embeddings).
    #[arg(long)]
    embeddings_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitName,
    /// Saved calibration; otherwise one is fitted on the validation split.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BANDWIDTH)]
    bandwidth: f64,
    /// `metric,value` CSV; printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-pair `id,raw,calibrated,gold` CSV.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    #[arg(long, value_enum, default_value = "validation")]
    split: SplitName,
    #[arg(long, default_value_t = DEFAULT_BANDWIDTH)]
    bandwidth: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    /// Tab-separated sentence A, sentence B and an optional gold score.
    #[arg(long)]
    pairs: PathBuf,
    /// Without one, scores map linearly onto [1, 5].
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: RenderArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeWordsArgs {
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    sentence_a: String,
    sentence_b: String,
    #[arg(long, value_enum, default_value = "text")]
    format: RenderArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeContextsArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    /// Expected window length; must match the checkpoint.
    #[arg(long)]
    window: Option<usize>,
    sentence_a: String,
    sentence_b: String,
    #[arg(long, value_enum, default_value = "text")]
    format: RenderArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3, 5, 7, 9])]
    windows: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_BANDWIDTH)]
    bandwidth: f64,
    /// Result CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Core(sts_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<sts_core::Error> for CliError {
    fn from(e: sts_core::Error) -> Self {
        CliError::Core(e)
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn vocabulary(split: &DatasetSplit) -> HashSet<String> {
    embeddings::lookup_keys(split.all().flat_map(|p| p.tokens_a.iter().chain(&p.tokens_b)))
}

fn load_model(path: &Path, table: &EmbeddingTable) -> Result<SiameseModel, CliError> {
    let model = SiameseModel::load_checkpoint(path)?;
    let meta = model.meta();
    if meta.embed_dim != table.dim() {
        return Err(CliError::Data(format!(
            "{}: model expects {}-dimensional embeddings, table has {}",
            path.display(),
            meta.embed_dim,
            table.dim()
        )));
    }
    if meta.embeddings != table.id() {
        eprintln!(
            "warning: model was trained with embeddings {:?}, using {:?}",
            meta.embeddings,
            table.id()
        );
    }
    Ok(model)
}

fn select(split: &DatasetSplit, name: SplitName) -> &[SentencePair] {
    match name {
        SplitName::Train => &split.train,
        SplitName::Validation => &split.validation,
        SplitName::Test => &split.test,
    }
}

fn run_train(a: TrainArgs) -> Result<(), CliError> {
    let data = a.data.load()?;
    let table = a.embeddings.load(Some(&vocabulary(&data)))?;
    let cfg = a.optim.model_config(&a.model, table.dim());
    let model = SiameseModel::new(&cfg, table.id())?;
    let outcome = model::train(model, &data, &table, &a.optim.train_config())?;
    outcome.model.save_checkpoint(&a.out)?;

    let log = model::epoch_log_csv(&outcome.log);
    match &a.log {
        Some(p) => write_output(Some(p), &log)?,
        None => eprint!("{log}"),
    }
    let used = outcome.embeddings.as_ref().unwrap_or(&table);
    if let Some(p) = &a.calibration {
        eval::fit_on_split(&outcome.model, &data.validation, used, a.bandwidth)?.save(p)?;
    }
    match (&outcome.embeddings, &a.embeddings_out) {
        (Some(t), Some(p)) => t.save_text(p)?,
        (Some(_), None) => eprintln!("note: fine-tuned vectors discarded; pass --embeddings-out to keep them"),
        _ => {}
    }
    eprintln!("best epoch {} of {}; checkpoint {}", outcome.best_epoch, outcome.log.len(), a.out.display());
    Ok(())
}

fn calibration_for(
    model: &SiameseModel,
    data: &DatasetSplit,
    table: &EmbeddingTable,
    path: Option<&Path>,
    bandwidth: f64,
) -> Result<CalibrationModel, CliError> {
    match path {
        Some(p) => Ok(CalibrationModel::load(p)?),
        None => Ok(eval::fit_on_split(model, &data.validation, table, bandwidth)?),
    }
}

fn run_evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let data = a.data.load()?;
    let table = a.embeddings.load(Some(&vocabulary(&data)))?;
    let model = load_model(&a.model, &table)?;
    let cal = calibration_for(&model, &data, &table, a.calibration.as_deref(), a.bandwidth)?;
    let result = eval::evaluate(&model, select(&data, a.split), &table, Some(&cal))?;
    write_output(a.report.as_deref(), &result.report.to_csv())?;
    if let Some(p) = &a.dump {
        write_output(Some(p), &eval::scored_pairs_csv(&result.pairs))?;
    }
    Ok(())
}

fn run_calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let data = a.data.load()?;
    let table = a.embeddings.load(Some(&vocabulary(&data)))?;
    let model = load_model(&a.model, &table)?;
    let cal = eval::fit_on_split(&model, select(&data, a.split), &table, a.bandwidth)?;
    cal.save(&a.out)?;
    Ok(())
}

fn run_predict(a: PredictArgs) -> Result<(), CliError> {
    let pairs = corpus::load_pair_list(&a.pairs)?;
    let mut tokens = Vec::new();
    for (_, s, t, _) in &pairs {
        tokens.extend(corpus::tokenize(s)?);
        tokens.extend(corpus::tokenize(t)?);
    }
    let table = a.embeddings.load(Some(&embeddings::lookup_keys(&tokens)))?;
    let model = load_model(&a.model, &table)?;
    let cal = a.calibration.as_deref().map(CalibrationModel::load).transpose()?;
    let scores = analysis::score_pairs(&model, cal.as_ref(), &table, &pairs)?;
    write_output(a.out.as_deref(), &analysis::pair_scores_render(&scores, a.format.into()))
}

fn sentence_vocabulary(a: &str, b: &str) -> Result<HashSet<String>, CliError> {
    let mut tokens = corpus::tokenize(a)?;
    tokens.extend(corpus::tokenize(b)?);
    Ok(embeddings::lookup_keys(&tokens))
}

fn run_analyze_words(a: AnalyzeWordsArgs) -> Result<(), CliError> {
    let table = a.embeddings.load(Some(&sentence_vocabulary(&a.sentence_a, &a.sentence_b)?))?;
    let m = analysis::word_matrix(&a.sentence_a, &a.sentence_b, &table)?;
    write_output(a.out.as_deref(), &m.render(a.format.into()))
}

fn run_analyze_contexts(a: AnalyzeContextsArgs) -> Result<(), CliError> {
    let table = a.embeddings.load(Some(&sentence_vocabulary(&a.sentence_a, &a.sentence_b)?))?;
    let model = load_model(&a.model, &table)?;
    if let Some(w) = a.window {
        if w != model.meta().window {
            return Err(CliError::Usage(format!(
                "--window {w} does not match the checkpoint's window {}",
                model.meta().window
            )));
        }
    }
    let m = analysis::context_matrix(&a.sentence_a, &a.sentence_b, &model, &table)?;
    write_output(a.out.as_deref(), &m.render(a.format.into()))
}

fn run_ablate(a: AblateArgs) -> Result<(), CliError> {
    let data = a.data.load()?;
    let table = a.embeddings.load(Some(&vocabulary(&data)))?;
    let config = AblationConfig {
        model: a.optim.model_config(&a.model, table.dim()),
        train: a.optim.train_config(),
        bandwidth: a.bandwidth,
    };
    config.train.validate()?;
    let rows = analysis::ablate(&a.windows, &data, &table, &config);
    for row in &rows {
        if let Err(e) = &row.outcome {
            eprintln!("window {}: {e}", row.window);
        }
    }
    write_output(a.out.as_deref(), &analysis::ablation_csv(&rows))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Predict(a) => run_predict(a),
        Command::AnalyzeWords(a) => run_analyze_words(a),
        Command::AnalyzeContexts(a) => run_analyze_contexts(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Calibrate(a) => run_calibrate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
