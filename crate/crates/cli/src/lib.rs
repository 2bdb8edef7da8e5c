//! Command implementations behind the `xlcons` binary.
//!
//! Every command is deterministic given its flags: all randomness comes from
//! `--seed`. Exit codes are 0 on success, 1 for usage errors, 2 for data
//! errors and 3 when some cells of an experiment matrix failed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use xlcons::calibration::{reliability_csv, DEFAULT_BINS};
use xlcons::data::{generate_corpus, Corpus, CorpusSpec, Split};
use xlcons::experiment::{
    accuracy_tsv, ece_table, ece_tsv, experiment_config, format_tsv, render_tsv, run_matrix,
    train_on_corpus, write_matrix_outputs, ExperimentMatrix, TableRow,
};
use xlcons::losses::{LossSpec, Regularizer, Scenario};
use xlcons::model::{self, ModelParams};
use xlcons::trainer::{accuracy_table, predict, TrainConfig};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] xlcons::Error),
    #[error("{failed} of {total} matrix cells failed")]
    Partial { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Partial { .. } => EXIT_PARTIAL,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "xlcons", version, about = "Cross-lingual consistency-regularized verdict classification")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic parallel corpus.
    Gendata(GendataArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Per-language accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Per-language ECE and reliability table of a checkpoint.
    Calibrate(CalibrateArgs),
    /// Train and score every cell of the experiment matrix.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GendataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated language tags, source first.
    #[arg(long, value_delimiter = ',')]
    pub languages: Option<Vec<String>>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub dev: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub hard_nei_rate: Option<f64>,
    #[arg(long)]
    pub cognate_ratio: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl GendataArgs {
    pub fn spec(&self) -> CorpusSpec {
        let d = CorpusSpec::default();
        CorpusSpec {
            languages: self.languages.clone().unwrap_or(d.languages),
            train_size: self.train.unwrap_or(d.train_size),
            dev_size: self.dev.unwrap_or(d.dev_size),
            test_size: self.test.unwrap_or(d.test_size),
            vocab_size: self.vocab_size.unwrap_or(d.vocab_size),
            num_topics: self.topics.unwrap_or(d.num_topics),
            hard_nei_rate: self.hard_nei_rate.unwrap_or(d.hard_nei_rate),
            cognate_ratio: self.cognate_ratio.unwrap_or(d.cognate_ratio),
            noise_rate: self.noise.unwrap_or(d.noise_rate),
            seed: self.seed.unwrap_or(d.seed),
            ..d
        }
    }
}

/// Trainer hyperparameters shared by `train` and `compare`.
#[derive(Debug, Args)]
pub struct HyperArgs {
    /// JSON run config with any `TrainConfig` fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

impl HyperArgs {
    /// Without `--config` the base is the experiment defaults (seed 0).
    pub fn base_config(&self) -> Result<TrainConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                serde_json::from_str(&text)
                    .map_err(|e| usage(format!("run config {}: {e}", path.display())))?
            }
            None => experiment_config(0),
        };
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(e) = self.epochs {
            config.max_epochs = e;
        }
        if let Some(b) = self.batch_size {
            config.batch_size = b;
        }
        if let Some(p) = self.patience {
            config.patience = p;
        }
        if let Some(lr) = self.lr {
            config.learning_rate = lr;
        }
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub scenario: Option<Scenario>,
    /// Consistency regularizer; parallel scenario only.
    #[arg(long)]
    pub reg: Option<Regularizer>,
    /// Regularizer strength; defaults to 0.25 for `j` and 1 otherwise.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for `checkpoint.json` and `train_report.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

impl TrainArgs {
    pub fn config(&self) -> Result<TrainConfig, CliError> {
        let mut config = self.hyper.base_config()?;
        let scenario = match (self.scenario, &self.hyper.config) {
            (Some(s), _) => s,
            (None, Some(_)) => config.loss_spec.scenario,
            (None, None) => return Err(usage("--scenario is required")),
        };
        if scenario != Scenario::Parallel && (self.reg.is_some() || self.lambda.is_some()) {
            return Err(usage(format!("--reg/--lambda require --scenario parallel, got {scenario}")));
        }
        if self.scenario.is_some() || self.reg.is_some() || self.lambda.is_some() {
            config.loss_spec = match scenario {
                Scenario::ZeroShot => LossSpec::zero_shot(),
                Scenario::NonParallel => LossSpec::non_parallel(),
                Scenario::Parallel => {
                    let reg = self.reg.unwrap_or(Regularizer::None);
                    LossSpec::parallel(reg, self.lambda.unwrap_or(reg.default_lambda()))
                }
            };
        }
        config.validate().map_err(|e| usage(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Also write the table as TSV to this path.
    #[arg(long)]
    pub tsv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Directory for `ece.tsv` and `reliability.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated row names such as `zero-shot,parallel+j(0.25)`;
    /// defaults to the full ten-row matrix.
    #[arg(long, value_delimiter = ',')]
    pub cells: Option<Vec<LossSpec>>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

/// Runs a parsed command, printing its tables to stdout.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Gendata(a) => cmd_gendata(a).map(|s| print!("{s}")),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a).map(|s| print!("{s}")),
        Command::Calibrate(a) => cmd_calibrate(a).map(|s| print!("{s}")),
        Command::Compare(a) => cmd_compare(a).map(|s| print!("{s}")),
    }
}

pub fn cmd_gendata(args: &GendataArgs) -> Result<String, CliError> {
    let spec = args.spec();
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let generated = generate_corpus(&spec)?;
    generated.corpus.save(&args.out)?;
    fs::write(args.out.join("corpus_spec.json"), to_json(&spec)?)?;
    Ok(format!(
        "wrote {} languages x ({} train, {} dev, {} test) to {}\n",
        spec.languages.len(),
        spec.train_size,
        spec.dev_size,
        spec.test_size,
        args.out.display()
    ))
}

fn load_corpus(dir: &Path) -> Result<Corpus, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Data(xlcons::Error::InvalidArgument(format!(
            "corpus directory {} does not exist",
            dir.display()
        ))));
    }
    Ok(Corpus::load(dir)?)
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let config = args.config()?;
    let corpus = load_corpus(&args.data)?;
    info!("training {} with seed {}", config.loss_spec.name(), config.seed);
    let (params, mut report) = train_on_corpus(&config, &corpus)?;

    fs::create_dir_all(&args.out)?;
    let ckpt = args.out.join("checkpoint.json");
    model::save(&params, &ckpt)?;
    report.checkpoint = Some(ckpt.to_string_lossy().into_owned());
    fs::write(args.out.join("train_report.json"), to_json(&report)?)?;
    fs::write(args.out.join("train_config.json"), to_json(&config)?)?;

    let best = &report.epochs[report.best_epoch - 1];
    println!(
        "{}: best epoch {} of {}, dev metric {:.1}, checkpoint {}",
        config.loss_spec.name(),
        report.best_epoch,
        report.epochs_run,
        100.0 * best.dev_metric,
        ckpt.display()
    );
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, xlcons::Error> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Loads a checkpoint and rejects it unless its vocabulary is exactly the
/// corpus vocabulary.
fn load_matching(checkpoint: &Path, corpus: &Corpus) -> Result<ModelParams, CliError> {
    let params = model::load(checkpoint)?;
    let ours = corpus.vocabulary();
    let theirs = params.vocab()?;
    if theirs.tokens() != ours.tokens() {
        let missing = ours.tokens().iter().filter(|t| theirs.id(t).is_none()).count();
        return Err(xlcons::Error::VocabularyMismatch(format!(
            "checkpoint has {} tokens, corpus has {} ({missing} corpus tokens unknown to the checkpoint)",
            theirs.tokens().len(),
            ours.tokens().len()
        ))
        .into());
    }
    Ok(params)
}

fn row_name(checkpoint: &Path) -> String {
    checkpoint
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| "model".into())
}

/// Returns the rendered table; writes the TSV when `--tsv` is given.
pub fn cmd_eval(args: &EvalArgs) -> Result<String, CliError> {
    let corpus = load_corpus(&args.data)?;
    let params = load_matching(&args.checkpoint, &corpus)?;
    let predictions = predict(&params, &corpus.all_languages(args.split))?;
    let table = accuracy_table(&predictions, Some(&corpus.languages));
    let row: TableRow = (
        row_name(&args.checkpoint),
        Some((
            corpus.languages.iter().map(|l| table.get(l)).collect(),
            table.macro_average,
        )),
    );
    let tsv = format_tsv(&corpus.languages, &[row]);
    if let Some(path) = &args.tsv {
        fs::write(path, &tsv)?;
    }
    let mut out = render_tsv(&tsv);
    for w in &table.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    Ok(out)
}

/// Writes `ece.tsv` plus a pooled `reliability.csv` and one
/// `reliability.<lang>.csv` per language; returns the rendered ECE table.
pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<String, CliError> {
    if args.bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    let corpus = load_corpus(&args.data)?;
    let params = load_matching(&args.checkpoint, &corpus)?;
    let predictions = predict(&params, &corpus.all_languages(args.split))?;
    let table = ece_table(&predictions, &corpus.languages, args.bins)?;
    let row: TableRow = (
        row_name(&args.checkpoint),
        Some((
            corpus.languages.iter().map(|l| table.get(l)).collect(),
            table.macro_average,
        )),
    );
    let tsv = format_tsv(&corpus.languages, &[row]);
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("ece.tsv"), &tsv)?;
    fs::write(args.out.join("reliability.csv"), reliability_csv(&table.pooled))?;
    for (lang, report) in &table.rows {
        fs::write(args.out.join(format!("reliability.{lang}.csv")), reliability_csv(report))?;
    }
    Ok(render_tsv(&tsv))
}

/// Trains the matrix and writes all artifacts. Returns both rendered
/// tables, or [`CliError::Partial`] after writing if any cell failed.
pub fn cmd_compare(args: &CompareArgs) -> Result<String, CliError> {
    if args.bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    let base = args.hyper.base_config()?;
    base.validate().map_err(|e| usage(e.to_string()))?;
    let matrix = match &args.cells {
        Some(specs) if specs.is_empty() => return Err(usage("--cells is empty")),
        Some(specs) => ExperimentMatrix::from_specs(specs.iter().cloned()).map_err(|e| usage(e.to_string()))?,
        None => ExperimentMatrix::default(),
    };
    let corpus = load_corpus(&args.data)?;
    let report = run_matrix(&corpus, &matrix, &base, args.bins);
    write_matrix_outputs(&report, &args.out)?;

    let out = format!(
        "accuracy (%)\n{}\nECE (%)\n{}",
        render_tsv(&accuracy_tsv(&report)),
        render_tsv(&ece_tsv(&report))
    );
    let failed = report.failures();
    if failed > 0 {
        print!("{out}");
        for cell in &report.cells {
            if let Err(e) = &cell.outcome {
                eprintln!("cell {} FAILED: {e}", cell.name);
            }
        }
        return Err(CliError::Partial {
            failed,
            total: report.cells.len(),
        });
    }
    Ok(out)
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code. Help and version requests exit 0.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
