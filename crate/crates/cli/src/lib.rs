//! `dtwc` command-line front end.
//!
//! Exit codes: 0 success, 1 data or model error, 2 usage error.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use dtwc_core::cleanse::CleansingConfig;
use dtwc_core::container::{load_container, save_container};
use dtwc_core::corpus_io::{self, TweetRecord};
use dtwc_core::eval::{self, ModelResult};
use dtwc_core::optimize::OptimizerKind;
use dtwc_core::pipeline::{self, ModelKind, TrainOptions, TrainedModel, VectorizerKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Env var capping the sweep worker pool.
pub const THREADS_ENV: &str = "DTWC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dtwc", version, about = "Disaster tweet classification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print raw and deduplicated dataset statistics as JSON.
    Stats(StatsArgs),
    /// Fit a vectorizer + model and write a model container.
    Train(TrainArgs),
    /// Evaluate a model container on labeled data.
    Eval(EvalArgs),
    /// Label texts read one per line.
    Predict(PredictArgs),
    /// Train over a hyperparameter grid and emit CSV results.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Dataset CSV (alternative to --data).
    path: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
}

/// Everything a training run can be configured with. Also settable from a
/// `key=value` file via `--config`; flags win over the file.
#[derive(Debug, Clone, Default, Args)]
struct Settings {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    vectorizer: Option<VectorizerKind>,
    /// Validation fraction.
    #[arg(long)]
    val: Option<f64>,
    /// Split (and model) seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    /// Replacement stopword list, one word per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Extra abbreviations, `key<TAB>expansion` per line.
    #[arg(long)]
    abbrev: Option<PathBuf>,
    /// Naive Bayes smoothing.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long = "min-df")]
    min_df: Option<usize>,
    #[arg(long = "embed-dim")]
    embed_dim: Option<usize>,
    #[arg(long = "embed-epochs")]
    embed_epochs: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ffn: Option<usize>,
    #[arg(long = "max-len")]
    max_len: Option<usize>,
    /// Keep duplicate texts instead of collapsing them before the split.
    #[arg(long = "keep-duplicates")]
    keep_duplicates: bool,
    /// `key=value` file with defaults for any of these flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    settings: Settings,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Model container written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Evaluate every record instead of the model's validation split.
    #[arg(long)]
    all: bool,
    /// Plain-text report instead of JSON.
    #[arg(long)]
    text: bool,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Text file, one input per line; stdin when absent.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    settings: Settings,
    /// `key=v1,v2,...`; repeatable. Keys are the long flag names.
    #[arg(long = "grid")]
    grid: Vec<String>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print the mean F1 per vectorizer table.
    #[arg(long)]
    summary: bool,
}

/// Usage errors exit with 2, everything else with 1.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Failure(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Failure(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage<T>(msg: impl Display) -> CliResult<T> {
    Err(CliError::Usage(msg.to_string()))
}

fn set_value<T>(slot: &mut Option<T>, key: &str, value: &str, overwrite: bool) -> Result<(), String>
where
    T: FromStr,
    T::Err: Display,
{
    if slot.is_none() || overwrite {
        *slot = Some(value.trim().parse().map_err(|e| format!("{key}={value}: {e}"))?);
    }
    Ok(())
}

impl Settings {
    /// Assigns one `key=value` setting. Without `overwrite` an already-set
    /// value (from a flag) is kept.
    fn assign(&mut self, key: &str, value: &str, overwrite: bool) -> Result<(), String> {
        match key.trim() {
            "data" => set_value(&mut self.data, key, value, overwrite),
            "model" => set_value(&mut self.model, key, value, overwrite),
            "vectorizer" => set_value(&mut self.vectorizer, key, value, overwrite),
            "val" => set_value(&mut self.val, key, value, overwrite),
            "seed" => set_value(&mut self.seed, key, value, overwrite),
            "dropout" => set_value(&mut self.dropout, key, value, overwrite),
            "lr" => set_value(&mut self.lr, key, value, overwrite),
            "epochs" => set_value(&mut self.epochs, key, value, overwrite),
            "batch" => set_value(&mut self.batch, key, value, overwrite),
            "optimizer" => set_value(&mut self.optimizer, key, value, overwrite),
            "stopwords" => set_value(&mut self.stopwords, key, value, overwrite),
            "abbrev" => set_value(&mut self.abbrev, key, value, overwrite),
            "alpha" => set_value(&mut self.alpha, key, value, overwrite),
            "l2" => set_value(&mut self.l2, key, value, overwrite),
            "min-df" | "min_df" => set_value(&mut self.min_df, key, value, overwrite),
            "embed-dim" | "embed_dim" => set_value(&mut self.embed_dim, key, value, overwrite),
            "embed-epochs" | "embed_epochs" => set_value(&mut self.embed_epochs, key, value, overwrite),
            "window" => set_value(&mut self.window, key, value, overwrite),
            "negatives" => set_value(&mut self.negatives, key, value, overwrite),
            "layers" => set_value(&mut self.layers, key, value, overwrite),
            "hidden" => set_value(&mut self.hidden, key, value, overwrite),
            "heads" => set_value(&mut self.heads, key, value, overwrite),
            "ffn" => set_value(&mut self.ffn, key, value, overwrite),
            "max-len" | "max_len" => set_value(&mut self.max_len, key, value, overwrite),
            "keep-duplicates" | "keep_duplicates" => {
                let v: bool = value.trim().parse().map_err(|e| format!("{key}={value}: {e}"))?;
                if overwrite || !self.keep_duplicates {
                    self.keep_duplicates = v;
                }
                Ok(())
            }
            other => Err(format!("unknown setting `{other}`")),
        }
    }

    /// Fills unset fields from the `--config` file, if any.
    fn resolve(mut self) -> CliResult<Self> {
        if let Some(path) = self.config.clone() {
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return usage(format!("{}:{}: expected key=value", path.display(), lineno + 1));
                };
                if let Err(e) = self.assign(k, v, false) {
                    return usage(format!("{}:{}: {e}", path.display(), lineno + 1));
                }
            }
        }
        Ok(self)
    }

    fn data_path(&self) -> CliResult<&Path> {
        match &self.data {
            Some(p) => Ok(p),
            None => usage("--data is required"),
        }
    }

    fn train_options(&self) -> TrainOptions {
        let mut o = TrainOptions::default();
        if let Some(v) = self.model {
            o.model = v;
        }
        if let Some(v) = self.vectorizer {
            o.vectorizer = v;
        }
        if let Some(v) = self.val {
            o.val_fraction = v;
        }
        if let Some(v) = self.seed {
            o.seed = v;
            o.embed.seed = v;
            o.encoder.seed = v;
        }
        o.dedup = !self.keep_duplicates;
        o.dropout = self.dropout.unwrap_or(o.dropout);
        o.learning_rate = self.lr;
        o.epochs = self.epochs;
        o.batch_size = self.batch;
        o.optimizer = self.optimizer;
        o.alpha = self.alpha.unwrap_or(o.alpha);
        o.l2 = self.l2.unwrap_or(o.l2);
        o.min_df = self.min_df.unwrap_or(o.min_df);
        o.embed.dim = self.embed_dim.unwrap_or(o.embed.dim);
        o.embed.epochs = self.embed_epochs.unwrap_or(o.embed.epochs);
        o.embed.window = self.window.unwrap_or(o.embed.window);
        o.embed.negatives = self.negatives.unwrap_or(o.embed.negatives);
        o.encoder.layers = self.layers.unwrap_or(o.encoder.layers);
        o.encoder.hidden = self.hidden.unwrap_or(o.encoder.hidden);
        o.encoder.heads = self.heads.unwrap_or(o.encoder.heads);
        o.encoder.ffn_dim = self.ffn.unwrap_or(o.encoder.ffn_dim);
        o.encoder.max_len = self.max_len.unwrap_or(o.encoder.max_len);
        o
    }

    fn cleansing(&self) -> CliResult<CleansingConfig> {
        let mut c = CleansingConfig::default();
        if let Some(p) = &self.stopwords {
            c = c.with_stopwords_file(p)?;
        }
        if let Some(p) = &self.abbrev {
            c = c.with_abbreviations_file(p)?;
        }
        Ok(c)
    }
}

fn load_records(path: &Path) -> CliResult<Vec<TweetRecord>> {
    Ok(corpus_io::load_csv(path).with_context(|| format!("loading {}", path.display()))?)
}

fn load_model(path: &Path) -> CliResult<TrainedModel> {
    let container = load_container(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(TrainedModel::from_container(&container)?)
}

fn cmd_stats(args: StatsArgs, out: &mut dyn Write) -> CliResult<()> {
    let path = match (args.path, args.data) {
        (Some(p), None) | (None, Some(p)) => p,
        (Some(_), Some(_)) => return usage("give the dataset either positionally or with --data"),
        (None, None) => return usage("stats needs a dataset path"),
    };
    let records = load_records(&path)?;
    let raw = corpus_io::dataset_stats(&records);
    let (deduped, removed) = corpus_io::dedup(&records);
    let mut dedup_stats = corpus_io::dataset_stats(&deduped);
    dedup_stats.duplicates_removed = removed;
    let report = json!({
        "total": raw.total,
        "per_class": raw.per_class,
        "unlabeled": raw.unlabeled,
        "duplicates_removed": removed,
        "dedup": dedup_stats,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn cmd_train(args: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let settings = args.settings.resolve()?;
    let records = load_records(settings.data_path()?)?;
    let options = settings.train_options();
    let outcome = pipeline::train(&records, &settings.cleansing()?, &options)?;
    let summary = json!({
        "model": options.model,
        "vectorizer": options.vectorizer,
        "n_train": outcome.n_train,
        "n_val": outcome.n_val,
        "val_metrics": outcome.val_metrics,
    });
    if let Some(dir) = args.out {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        save_container(&outcome.model.to_container()?, dir.join("model.dtwc"))?;
        fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        if options.model == ModelKind::Encoder {
            let mut lines = String::new();
            for record in &outcome.history {
                lines.push_str(&serde_json::to_string(record)?);
                lines.push('\n');
            }
            fs::write(dir.join("history.jsonl"), lines)?;
        }
    } else {
        writeln!(err, "note: no --out given; the trained model is discarded")?;
    }
    for record in &outcome.history {
        writeln!(err, "{}", serde_json::to_string(record)?)?;
    }
    writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

fn cmd_eval(args: EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let records = load_records(&args.data)?;
    if let Some(mismatch) = model.check_vocab(&records)? {
        writeln!(err, "warning: {mismatch}")?;
    }
    let subset = if args.all {
        records
    } else {
        model.validation_split(&records)?
    };
    if subset.is_empty() {
        return Err(anyhow!("no records to evaluate (validation split is empty; try --all)").into());
    }
    let report = model.evaluate(&subset)?;
    if args.text {
        write!(out, "{}", report.to_text())?;
    } else {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs, stdin: &mut dyn BufRead, out: &mut dyn Write) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let mut file_reader;
    let reader: &mut dyn BufRead = match &args.input {
        Some(p) => {
            file_reader = BufReader::new(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?);
            &mut file_reader
        }
        None => stdin,
    };
    for line in reader.lines() {
        let line = line?;
        let p = model.predict(&line)?;
        writeln!(out, "{}\t{:.6}", p.label, p.score)?;
    }
    Ok(())
}

/// Parsed `--grid` axes in command-line order.
fn parse_grid(specs: &[String]) -> CliResult<Vec<(String, Vec<String>)>> {
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for spec in specs {
        let Some((key, values)) = spec.split_once('=') else {
            return usage(format!("--grid `{spec}`: expected key=v1,v2"));
        };
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return usage(format!("--grid `{spec}`: no values"));
        }
        if axes.iter().any(|(k, _)| k == key) {
            return usage(format!("--grid key `{key}` given twice"));
        }
        axes.push((key.trim().to_string(), values));
    }
    Ok(axes)
}

/// Grid used when none is supplied: the tuned point and its neighbours.
fn default_grid(model: ModelKind) -> Vec<(String, Vec<String>)> {
    let strings = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
    match model {
        ModelKind::Encoder => vec![("lr".into(), strings(&["2e-6", "6e-6", "1e-5"]))],
        ModelKind::Nb => vec![("alpha".into(), strings(&["0.5", "1", "2"]))],
        ModelKind::Logreg | ModelKind::Svm => vec![("lr".into(), strings(&["0.003", "0.01", "0.03"]))],
    }
}

/// Cartesian product in row-major order: the last axis varies fastest.
fn grid_points(axes: &[(String, Vec<String>)]) -> Vec<Vec<String>> {
    axes.iter().fold(vec![Vec::new()], |acc, (_, values)| {
        acc.into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect()
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_sweep(args: SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let base = args.settings.resolve()?;
    let data_path = base.data_path()?.to_path_buf();
    let mut axes = parse_grid(&args.grid)?;
    if axes.is_empty() {
        axes = default_grid(base.model.unwrap_or(ModelKind::Nb));
    }
    let points = grid_points(&axes);
    let mut settings = Vec::with_capacity(points.len());
    for point in &points {
        let mut s = base.clone();
        for ((key, _), value) in axes.iter().zip(point) {
            if let Err(e) = s.assign(key, value, true) {
                return usage(format!("--grid: {e}"));
            }
        }
        let cleansing = s.cleansing()?;
        settings.push((s.train_options(), cleansing));
    }
    let records = load_records(&data_path)?;

    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let outcomes: Vec<_> = pool.install(|| {
        settings
            .par_iter()
            .map(|(options, cleansing)| pipeline::train(&records, cleansing, options))
            .collect()
    });

    let mut csv = String::new();
    let mut header: Vec<String> = axes.iter().map(|(k, _)| csv_field(k)).collect();
    header.extend(
        ["model", "vectorizer", "f1", "precision", "recall", "accuracy", "n_train", "n_val"].map(String::from),
    );
    csv.push_str(&header.join(","));
    csv.push('\n');
    let mut results = Vec::new();
    for ((point, (options, _)), outcome) in points.iter().zip(&settings).zip(outcomes) {
        let outcome = outcome.map_err(|e| anyhow!("grid point {}: {e}", point.join(",")))?;
        let m = outcome
            .val_metrics
            .ok_or_else(|| anyhow!("grid point {}: empty validation split", point.join(",")))?;
        let mut row: Vec<String> = point.iter().map(|v| csv_field(v)).collect();
        row.extend([
            options.model.to_string(),
            options.vectorizer.to_string(),
            format!("{:.6}", m.f1),
            format!("{:.6}", m.precision),
            format!("{:.6}", m.recall),
            format!("{:.6}", m.accuracy),
            outcome.n_train.to_string(),
            outcome.n_val.to_string(),
        ]);
        csv.push_str(&row.join(","));
        csv.push('\n');
        results.push(ModelResult::new(options.model.name(), options.vectorizer.name(), m.f1));
    }

    let summary = if args.summary {
        Some(eval::format_mean_table(&eval::mean_f1_by_vectorizer(&results)?))
    } else {
        None
    };
    match &args.out {
        Some(path) => {
            fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
            if let Some(s) = summary {
                write!(out, "{s}")?;
            }
        }
        None => {
            write!(out, "{csv}")?;
            if let Some(s) = summary {
                write!(err, "{s}")?;
            }
        }
    }
    Ok(())
}

/// Runs the CLI against explicit streams and returns the exit code.
pub fn run_with_io<I, T>(argv: I, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{rendered}")
            } else {
                write!(out, "{rendered}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Stats(a) => cmd_stats(a, out),
        Command::Train(a) => cmd_train(a, out, err),
        Command::Eval(a) => cmd_eval(a, out, err),
        Command::Predict(a) => cmd_predict(a, stdin, out),
        Command::Sweep(a) => cmd_sweep(a, out, err),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Failure(e)) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_FAILURE
        }
    }
}

/// Runs the CLI on the process's standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdin = std::io::stdin();
    let mut stdin = stdin.lock();
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr().lock();
    run_with_io(argv, &mut stdin, &mut stdout, &mut stderr)
}
