//! The `nlorp` command line: `train`, `predict`, `evaluate` and `serve`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::artifacts::{load_artifacts, load_from_paths, save_artifacts, ArtifactError, LoadedArtifacts};
use crate::corpus::{load_corpus, CsvSchema};
use crate::evaluation::{cross_validate, CvConfig, EvalError};
use crate::lstm::{LstmError, LstmHyperparams};
use crate::pipeline::{train_artifacts, TrainError, TrainingConfig};
use crate::predictor::PredictError;
use crate::service::{self, PredictResponse, ServiceState};
use crate::stopwords::{default_stopwords, load_stopwords};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Usage = 1,
    Data = 2,
    Training = 3,
}

impl From<ExitStatus> for ExitCode {
    fn from(s: ExitStatus) -> Self {
        ExitCode::from(s as u8)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "nlorp",
    version,
    about = "Predict email subject-line open rates from historical phrase rates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build mapping.tsv and lstm.model from a labelled corpus.
    Train {
        /// Labelled CSV corpus.
        #[arg(long)]
        data: PathBuf,
        /// Artifacts directory to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        training: TrainingArgs,
    },
    /// Predict one subject line and explain it.
    Predict {
        /// Directory written by `nlorp train`.
        #[arg(long)]
        artifacts: PathBuf,
        subject_line: String,
        /// Print the HTTP API response body instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// k-fold cross validation with the error-accuracy report.
    Evaluate {
        /// Labelled CSV corpus.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Absolute error tolerance C.
        #[arg(long, default_value_t = 0.1)]
        cutoff: f64,
        /// Where to write the JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        training: TrainingArgs,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, required_unless_present_all = ["mapping", "model"], conflicts_with_all = ["mapping", "model"])]
        artifacts: Option<PathBuf>,
        #[arg(long, requires = "model")]
        mapping: Option<PathBuf>,
        #[arg(long, requires = "mapping")]
        model: Option<PathBuf>,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Add permissive cross-origin headers.
        #[arg(long)]
        cors: bool,
    },
}

#[derive(Debug, Clone, Args)]
pub struct TrainingArgs {
    /// Seeds LSTM initialization, shuffling and dropout (and the fold split
    /// when evaluating).
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Drop phrases seen fewer times than this.
    #[arg(long, default_value_t = 1)]
    pub min_count: u64,
    /// Whitespace-separated stopword file; replaces the built-in English list.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// LSTM epochs [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Character embedding width [default: 24]
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// LSTM hidden width [default: 48]
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Dropout between LSTM layers, training only [default: 0.2]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// SGD step size [default: 0.01]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Phrases are truncated to this many characters [default: 64]
    #[arg(long)]
    pub max_seq_len: Option<usize>,
}

impl TrainingArgs {
    pub fn to_config(&self) -> Result<TrainingConfig, String> {
        let stopwords = match &self.stopwords {
            Some(path) => load_stopwords(path).map_err(|e| format!("{}: {e}", path.display()))?,
            None => default_stopwords(),
        };
        let d = LstmHyperparams::default();
        let lstm = LstmHyperparams {
            seed: self.seed,
            epochs: self.epochs.unwrap_or(d.epochs),
            embed_dim: self.embed_dim.unwrap_or(d.embed_dim),
            hidden_dim: self.hidden_dim.unwrap_or(d.hidden_dim),
            dropout_rate: self.dropout.unwrap_or(d.dropout_rate),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            max_seq_len: self.max_seq_len.unwrap_or(d.max_seq_len),
            ..d
        };
        lstm.validate().map_err(|e| e.to_string())?;
        Ok(TrainingConfig {
            stopwords,
            min_count: self.min_count,
            lstm,
        })
    }
}

fn fail(err: &mut dyn Write, status: ExitStatus, message: impl std::fmt::Display) -> ExitStatus {
    let _ = writeln!(err, "error: {message}");
    status
}

fn train_status(e: &TrainError) -> ExitStatus {
    match e {
        TrainError::Lstm(LstmError::NonFiniteLoss { .. } | LstmError::EmptyDataset) => ExitStatus::Training,
        _ => ExitStatus::Data,
    }
}

/// Parses `args` (including the program name) and runs the command, writing
/// to the given streams.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let status = if e.use_stderr() {
                ExitStatus::Usage
            } else {
                ExitStatus::Success
            };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return status;
        }
    };
    match cli.command {
        Command::Train {
            data,
            out: dir,
            training,
        } => cmd_train(&data, &dir, &training, out, err),
        Command::Predict {
            artifacts,
            subject_line,
            json,
        } => cmd_predict(&artifacts, &subject_line, json, out, err),
        Command::Evaluate {
            data,
            folds,
            cutoff,
            report,
            training,
        } => cmd_evaluate(&data, folds, cutoff, report.as_deref(), &training, out, err),
        Command::Serve {
            artifacts,
            mapping,
            model,
            port,
            cors,
        } => {
            let loaded = match (&artifacts, &mapping, &model) {
                (Some(dir), _, _) => load_artifacts(dir),
                (None, Some(mapping), Some(model)) => load_from_paths(mapping, model, None),
                _ => unreachable!("clap enforces --artifacts or --mapping with --model"),
            };
            cmd_serve(loaded, port, cors, out, err)
        }
    }
}

fn cmd_train(data: &Path, dir: &Path, args: &TrainingArgs, out: &mut dyn Write, err: &mut dyn Write) -> ExitStatus {
    let config = match args.to_config() {
        Ok(c) => c,
        Err(e) => return fail(err, ExitStatus::Usage, e),
    };
    let records = match load_corpus(data, CsvSchema::Detect) {
        Ok(r) => r,
        Err(e) => return fail(err, ExitStatus::Data, e),
    };
    let artifacts = match train_artifacts(&records, &config) {
        Ok(a) => a,
        Err(e) => return fail(err, train_status(&e), e),
    };
    if let Err(e) = save_artifacts(dir, &artifacts, &config) {
        return fail(err, ExitStatus::Data, e);
    }
    let _ = writeln!(
        out,
        "trained on {} subject lines: {} mapping entries, LSTM loss {:.6} -> {:.6}\nwrote {}",
        artifacts.n_records,
        artifacts.mapping.len(),
        artifacts.report.initial_loss,
        artifacts.report.final_loss(),
        dir.display()
    );
    ExitStatus::Success
}

fn cmd_predict(dir: &Path, subject_line: &str, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> ExitStatus {
    if subject_line.trim().is_empty() {
        return fail(err, ExitStatus::Usage, "subject line is empty");
    }
    let loaded = match load_artifacts(dir) {
        Ok(l) => l,
        Err(e) => return fail(err, ExitStatus::Data, e),
    };
    let prediction = match loaded.handle.predict(subject_line) {
        Ok(p) => p,
        Err(e @ PredictError::EmptySubjectLine) => return fail(err, ExitStatus::Usage, e),
        Err(e) => return fail(err, ExitStatus::Data, e),
    };
    if json {
        let body = serde_json::to_string_pretty(&PredictResponse::from(&prediction)).expect("response serializes");
        let _ = writeln!(out, "{body}");
        return ExitStatus::Success;
    }
    let pct = |v: f64| format!("{:6.2}%", 100.0 * v);
    let _ = writeln!(
        out,
        "open rate {}  ({:.6})",
        pct(prediction.open_rate),
        prediction.open_rate
    );
    let _ = writeln!(out, "= mean of {} phrase(s):", prediction.selected.len());
    for s in &prediction.selected {
        let _ = writeln!(
            out,
            "  {} {:<32} {}",
            pct(s.rate),
            format!("\"{}\"", s.trigram.text()),
            s.trigram.span
        );
        for c in s.components() {
            let source = match c.source {
                crate::predictor::RateSource::Mapping => "mapping",
                crate::predictor::RateSource::Lstm => "lstm",
            };
            let _ = writeln!(out, "      {} {:<28} {source}", pct(c.rate), c.phrase.text());
        }
    }
    ExitStatus::Success
}

fn cmd_evaluate(
    data: &Path,
    folds: usize,
    cutoff: f64,
    report_path: Option<&Path>,
    args: &TrainingArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> ExitStatus {
    let training = match args.to_config() {
        Ok(c) => c,
        Err(e) => return fail(err, ExitStatus::Usage, e),
    };
    let records = match load_corpus(data, CsvSchema::Detect) {
        Ok(r) => r,
        Err(e) => return fail(err, ExitStatus::Data, e),
    };
    let config = CvConfig {
        folds,
        cutoff,
        seed: args.seed,
        training,
    };
    let report = match cross_validate(&records, &config) {
        Ok(r) => r,
        Err(e @ (EvalError::InvalidCutoff(_) | EvalError::InvalidFolds)) => return fail(err, ExitStatus::Usage, e),
        Err(EvalError::Training { fold, source }) => {
            return fail(err, train_status(&source), format!("fold {fold}: {source}"))
        }
        Err(e) => return fail(err, ExitStatus::Data, e),
    };
    if let Some(path) = report_path {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        if let Err(e) = fs::write(path, json + "\n") {
            return fail(err, ExitStatus::Data, format!("{}: {e}", path.display()));
        }
    }
    let _ = write!(out, "{}", report.summary_table());
    ExitStatus::Success
}

fn cmd_serve(
    loaded: Result<LoadedArtifacts, ArtifactError>,
    port: u16,
    cors: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> ExitStatus {
    let loaded = match loaded {
        Ok(l) => l,
        Err(e) => return fail(err, ExitStatus::Data, e),
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => return fail(err, ExitStatus::Data, e),
    };
    let state = ServiceState::new();
    state.install(loaded);
    runtime.block_on(async {
        let listener = match service::bind(port).await {
            Ok(l) => l,
            Err(e) => return fail(err, ExitStatus::Data, format!("cannot bind port {port}: {e}")),
        };
        let addr = listener.local_addr().map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(out, "listening on {addr}");
        let _ = out.flush();
        match service::serve(listener, state, cors).await {
            Ok(()) => ExitStatus::Success,
            Err(e) => fail(err, ExitStatus::Data, e),
        }
    })
}
