//! Error metrics and k-fold cross validation.
//!
//! * **Error**: `|actual − predicted|` for one subject line.
//! * **Error accuracy @ C**: share of predictions whose error is at most `C`.
//! * **Average % error**: mean of `|actual − predicted| / actual` over pairs
//!   with a nonzero actual rate, reported as a fraction (0.2 = 20%).
//!
//! The group report splits predictions at the cutoff into "within"
//! (error ≤ C) and "beyond" (error > C), with each group's share and average
//! % error, ready to be drawn as a pie and a bar chart.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_text, SubjectLineRecord};
use crate::pipeline::{train_artifacts, TrainError, TrainingConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no prediction pairs to evaluate")]
    EmptyInput,
    #[error("every actual open rate is zero; average % error is undefined")]
    AllZeroActuals,
    #[error("cannot split {records} records into {folds} folds")]
    TooFewRecords { records: usize, folds: usize },
    #[error("cross validation needs at least 2 folds")]
    InvalidFolds,
    #[error("cutoff must be positive, got {0}")]
    InvalidCutoff(f64),
    #[error("fold {fold}: {source}")]
    Training {
        fold: usize,
        #[source]
        source: TrainError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionPair {
    pub actual: f64,
    pub predicted: f64,
}

impl PredictionPair {
    pub fn new(actual: f64, predicted: f64) -> Self {
        Self { actual, predicted }
    }
}

pub fn error(pair: &PredictionPair) -> f64 {
    (pair.actual - pair.predicted).abs()
}

fn check_cutoff(c: f64) -> Result<(), EvalError> {
    if c > 0.0 && !c.is_nan() {
        Ok(())
    } else {
        Err(EvalError::InvalidCutoff(c))
    }
}

/// Fraction of pairs whose error is at most `c` (the boundary counts as within).
pub fn error_accuracy_at_c(pairs: &[PredictionPair], c: f64) -> Result<f64, EvalError> {
    check_cutoff(c)?;
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let within = pairs.iter().filter(|p| error(p) <= c).count();
    Ok(within as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentError {
    pub value: f64,
    /// Pairs skipped because their actual rate is zero.
    pub n_excluded_zero_actual: usize,
}

pub fn average_percent_error(pairs: &[PredictionPair]) -> Result<PercentError, EvalError> {
    let ratios: Vec<f64> = pairs
        .iter()
        .filter(|p| p.actual > 0.0)
        .map(|p| error(p) / p.actual)
        .collect();
    if ratios.is_empty() {
        return Err(EvalError::AllZeroActuals);
    }
    Ok(PercentError {
        value: ratios.iter().sum::<f64>() / ratios.len() as f64,
        n_excluded_zero_actual: pairs.len() - ratios.len(),
    })
}

/// Shuffles `0..n` with `seed` and cuts it into `k` contiguous folds. The
/// first `n % k` folds hold one extra index.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k == 0 || n < k {
        return Err(EvalError::TooFewRecords { records: n, folds: k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub share: f64,
    /// `None` when the group is empty or every actual in it is zero.
    pub avg_percent_error: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub within: GroupStats,
    pub beyond: GroupStats,
}

fn group_stats(pairs: &[PredictionPair], total: usize) -> GroupStats {
    GroupStats {
        share: pairs.len() as f64 / total as f64,
        avg_percent_error: average_percent_error(pairs).ok().map(|p| p.value),
        count: pairs.len(),
    }
}

pub fn group_report(pairs: &[PredictionPair], c: f64) -> Result<GroupReport, EvalError> {
    check_cutoff(c)?;
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (within, beyond): (Vec<PredictionPair>, Vec<PredictionPair>) = pairs.iter().partition(|p| error(p) <= c);
    Ok(GroupReport {
        within: group_stats(&within, pairs.len()),
        beyond: group_stats(&beyond, pairs.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub error_accuracy_at_c: f64,
    pub average_percent_error: Option<f64>,
    pub n_excluded_zero_actual: usize,
    pub lstm_initial_loss: f64,
    pub lstm_final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cutoff: f64,
    /// Unweighted mean of the per-fold values.
    pub error_accuracy_at_c: f64,
    /// Unweighted mean over folds that have a defined value.
    pub average_percent_error_overall: f64,
    /// Shares are per-fold means (so `groups.within.share` equals
    /// `error_accuracy_at_c`); counts and average % errors are pooled.
    pub groups: GroupReport,
    pub per_fold: Vec<FoldReport>,
    pub n_total: usize,
    pub n_excluded_zero_actual: usize,
    /// Held-out subject lines with no tokens after normalization; not scored.
    pub n_unscorable: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn summary_table(&self) -> String {
        let pct = |v: f64| format!("{:.2}%", 100.0 * v);
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), pct);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:<8} {:<20} avg_%_error",
            "fold",
            "n_test",
            format!("error_accuracy@{}", self.cutoff)
        );
        for f in &self.per_fold {
            let _ = writeln!(
                out,
                "{:<6} {:<8} {:<20} {}",
                f.fold,
                f.n_test,
                pct(f.error_accuracy_at_c),
                opt(f.average_percent_error)
            );
        }
        let _ = writeln!(
            out,
            "{:<6} {:<8} {:<20} {}",
            "mean",
            self.n_total - self.n_unscorable,
            pct(self.error_accuracy_at_c),
            pct(self.average_percent_error_overall)
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "group             share     avg_%_error   count");
        for (name, g) in [
            (format!("error <= {}", self.cutoff), &self.groups.within),
            (format!("error >  {}", self.cutoff), &self.groups.beyond),
        ] {
            let _ = writeln!(
                out,
                "{:<17} {:<9} {:<13} {}",
                name,
                pct(g.share),
                opt(g.avg_percent_error),
                g.count
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub cutoff: f64,
    /// Seeds the fold shuffle. The LSTM has its own seed in `training`.
    pub seed: u64,
    pub training: TrainingConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            cutoff: 0.1,
            seed: 0,
            training: TrainingConfig::default(),
        }
    }
}

struct FoldOutcome {
    report: FoldReport,
    pairs: Vec<PredictionPair>,
    within_share: f64,
    n_unscorable: usize,
}

fn run_fold(
    corpus: &[SubjectLineRecord],
    folds: &[Vec<usize>],
    fold: usize,
    config: &CvConfig,
) -> Result<FoldOutcome, EvalError> {
    let train: Vec<SubjectLineRecord> = folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != fold)
        .flat_map(|(_, idx)| idx.iter().map(|&i| corpus[i].clone()))
        .collect();
    let artifacts = train_artifacts(&train, &config.training).map_err(|source| EvalError::Training { fold, source })?;
    let handle = artifacts.handle();

    let mut pairs = Vec::with_capacity(folds[fold].len());
    let mut n_unscorable = 0;
    for &i in &folds[fold] {
        let record = &corpus[i];
        if normalize_text(&record.text).is_empty() {
            n_unscorable += 1;
            continue;
        }
        let prediction = handle.predict(&record.text).expect("non-empty token list");
        pairs.push(PredictionPair::new(record.open_rate, prediction.open_rate));
    }
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let accuracy = error_accuracy_at_c(&pairs, config.cutoff)?;
    let ape = average_percent_error(&pairs).ok();
    Ok(FoldOutcome {
        report: FoldReport {
            fold,
            n_train: train.len(),
            n_test: pairs.len(),
            error_accuracy_at_c: accuracy,
            average_percent_error: ape.map(|p| p.value),
            n_excluded_zero_actual: ape.map_or(pairs.len(), |p| p.n_excluded_zero_actual),
            lstm_initial_loss: artifacts.report.initial_loss,
            lstm_final_loss: artifacts.report.final_loss(),
        },
        within_share: accuracy,
        pairs,
        n_unscorable,
    })
}

/// Trains on `k − 1` folds and predicts the held-out one, for every fold.
/// Folds run in parallel; the result does not depend on scheduling.
pub fn cross_validate(corpus: &[SubjectLineRecord], config: &CvConfig) -> Result<EvalReport, EvalError> {
    check_cutoff(config.cutoff)?;
    if config.folds < 2 {
        return Err(EvalError::InvalidFolds);
    }
    let folds = kfold_split(corpus.len(), config.folds, config.seed)?;
    let outcomes: Vec<FoldOutcome> = (0..folds.len())
        .into_par_iter()
        .map(|fold| run_fold(corpus, &folds, fold, config))
        .collect::<Result<_, _>>()?;

    let k = outcomes.len() as f64;
    let error_accuracy = outcomes.iter().map(|o| o.report.error_accuracy_at_c).sum::<f64>() / k;
    let defined: Vec<f64> = outcomes.iter().filter_map(|o| o.report.average_percent_error).collect();
    if defined.is_empty() {
        return Err(EvalError::AllZeroActuals);
    }
    let ape_overall = defined.iter().sum::<f64>() / defined.len() as f64;

    let pooled: Vec<PredictionPair> = outcomes.iter().flat_map(|o| o.pairs.iter().copied()).collect();
    let mut groups = group_report(&pooled, config.cutoff)?;
    groups.within.share = outcomes.iter().map(|o| o.within_share).sum::<f64>() / k;
    groups.beyond.share = outcomes.iter().map(|o| 1.0 - o.within_share).sum::<f64>() / k;

    Ok(EvalReport {
        cutoff: config.cutoff,
        error_accuracy_at_c: error_accuracy,
        average_percent_error_overall: ape_overall,
        groups,
        n_total: corpus.len(),
        n_excluded_zero_actual: outcomes.iter().map(|o| o.report.n_excluded_zero_actual).sum(),
        n_unscorable: outcomes.iter().map(|o| o.n_unscorable).sum(),
        per_fold: outcomes.into_iter().map(|o| o.report).collect(),
        seed: config.seed,
    })
}
