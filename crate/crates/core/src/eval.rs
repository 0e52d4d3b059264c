//! Regression metrics, error histograms and legal-limit confusion counts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ebac::LEGAL_LIMIT;

pub const DEFAULT_BINS: usize = 20;
/// Half-width of the error band whose coverage is reported.
pub const COVERAGE_BAND: f64 = 0.012;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {actual} targets vs {predicted} predictions")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("need at least 2 paired samples, got {0}")]
    TooFewPoints(usize),
}

fn check_pairs(a: &[f64], p: &[f64]) -> Result<(), EvalError> {
    if a.len() != p.len() {
        return Err(EvalError::LengthMismatch { actual: a.len(), predicted: p.len() });
    }
    if a.len() < 2 {
        return Err(EvalError::TooFewPoints(a.len()));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pearson {
    pub r: f64,
    /// Set when either input is constant; `r` is then 0.
    pub degenerate: bool,
}

pub fn pearson(a: &[f64], p: &[f64]) -> Result<Pearson, EvalError> {
    check_pairs(a, p)?;
    let (ma, mp) = (mean(a), mean(p));
    let (mut sab, mut saa, mut spp) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(p) {
        let (dx, dy) = (x - ma, y - mp);
        sab += dx * dy;
        saa += dx * dx;
        spp += dy * dy;
    }
    if saa == 0.0 || spp == 0.0 {
        return Ok(Pearson { r: 0.0, degenerate: true });
    }
    Ok(Pearson {
        r: (sab / (saa * spp).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent; `None` when the targets are constant.
    pub rae: Option<f64>,
    /// Percent; `None` when the targets are constant.
    pub rrse: Option<f64>,
}

pub fn regression_metrics(a: &[f64], p: &[f64]) -> Result<RegressionMetrics, EvalError> {
    check_pairs(a, p)?;
    let n = a.len() as f64;
    let ma = mean(a);
    let (mut abs_e, mut sq_e, mut abs_d, mut sq_d) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(p) {
        let e = y - x;
        let d = x - ma;
        abs_e += e.abs();
        sq_e += e * e;
        abs_d += d.abs();
        sq_d += d * d;
    }
    let constant = abs_d == 0.0;
    Ok(RegressionMetrics {
        mae: abs_e / n,
        rmse: (sq_e / n).sqrt(),
        rae: (!constant).then(|| 100.0 * abs_e / abs_d),
        rrse: (!constant).then(|| 100.0 * (sq_e / sq_d).sqrt()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width bins over `[lo, hi]`; right-open except the last. A zero-width
/// range puts everything in the first bin.
fn bin_counts(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let k = if width > 0.0 { ((v - lo) / width).floor() as isize } else { 0 };
        counts[k.clamp(0, bins as isize - 1) as usize] += 1;
    }
    counts
}

fn bin_edges(lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64)> {
    let width = (hi - lo) / bins as f64;
    (0..bins)
        .map(|k| {
            let right = if k + 1 == bins { hi } else { lo + (k + 1) as f64 * width };
            (lo + k as f64 * width, right)
        })
        .collect()
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Errors `a − p` per pair.
pub fn errors(a: &[f64], p: &[f64]) -> Vec<f64> {
    a.iter().zip(p).map(|(x, y)| x - y).collect()
}

pub fn coverage(errors: &[f64], band: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|e| e.abs() <= band).count() as f64 / errors.len() as f64
}

/// Histogram of `a − p` over its own range plus the ±0.012 coverage.
pub fn error_histogram(a: &[f64], p: &[f64], bins: usize) -> Result<(Vec<HistogramBin>, f64), EvalError> {
    if a.len() != p.len() {
        return Err(EvalError::LengthMismatch { actual: a.len(), predicted: p.len() });
    }
    let bins = bins.max(1);
    let e = errors(a, p);
    if e.is_empty() {
        return Ok((Vec::new(), 0.0));
    }
    let (lo, hi) = extent(e.iter().copied());
    let counts = bin_counts(&e, lo, hi, bins);
    let hist = bin_edges(lo, hi, bins)
        .into_iter()
        .zip(counts)
        .map(|((left, right), count)| HistogramBin { left, right, count })
        .collect();
    Ok((hist, coverage(&e, COVERAGE_BAND)))
}

/// Shared-edge histogram of train and test errors as
/// `bin_left,bin_right,count_train,count_test` CSV.
pub fn joint_histogram_csv(train_errors: &[f64], test_errors: &[f64], bins: usize) -> String {
    let bins = bins.max(1);
    let mut out = String::from("bin_left,bin_right,count_train,count_test\n");
    let (lo, hi) = extent(train_errors.iter().chain(test_errors).copied());
    if lo > hi {
        return out;
    }
    let tr = bin_counts(train_errors, lo, hi, bins);
    let te = bin_counts(test_errors, lo, hi, bins);
    for (k, (l, r)) in bin_edges(lo, hi, bins).into_iter().enumerate() {
        writeln!(out, "{l},{r},{},{}", tr[k], te[k]).unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegalConfusion {
    pub threshold: f64,
    /// Actual ≥ threshold and predicted ≥ threshold.
    pub true_positive: usize,
    /// Actual ≥ threshold but predicted below.
    pub false_negative: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    /// `None` when no actual value reaches the threshold.
    pub miss_rate: Option<f64>,
}

pub fn legal_confusion(a: &[f64], p: &[f64], threshold: f64) -> Result<LegalConfusion, EvalError> {
    if a.len() != p.len() {
        return Err(EvalError::LengthMismatch { actual: a.len(), predicted: p.len() });
    }
    let mut c = LegalConfusion {
        threshold,
        true_positive: 0,
        false_negative: 0,
        false_positive: 0,
        true_negative: 0,
        miss_rate: None,
    };
    for (x, y) in a.iter().zip(p) {
        match (*x >= threshold, *y >= threshold) {
            (true, true) => c.true_positive += 1,
            (true, false) => c.false_negative += 1,
            (false, true) => c.false_positive += 1,
            (false, false) => c.true_negative += 1,
        }
    }
    let positives = c.true_positive + c.false_negative;
    if positives > 0 {
        c.miss_rate = Some(c.false_negative as f64 / positives as f64);
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split_name: String,
    pub n: usize,
    pub pearson_r: f64,
    pub pearson_degenerate: bool,
    pub mae: f64,
    pub rmse: f64,
    pub rae: Option<f64>,
    pub rrse: Option<f64>,
    pub histogram: Vec<HistogramBin>,
    pub coverage_012: f64,
    pub legal_confusion: LegalConfusion,
}

pub fn evaluate(split_name: &str, a: &[f64], p: &[f64]) -> Result<EvalReport, EvalError> {
    let r = pearson(a, p)?;
    let m = regression_metrics(a, p)?;
    let (histogram, coverage_012) = error_histogram(a, p, DEFAULT_BINS)?;
    Ok(EvalReport {
        split_name: split_name.to_owned(),
        n: a.len(),
        pearson_r: r.r,
        pearson_degenerate: r.degenerate,
        mae: m.mae,
        rmse: m.rmse,
        rae: m.rae,
        rrse: m.rrse,
        histogram,
        coverage_012,
        legal_confusion: legal_confusion(a, p, LEGAL_LIMIT)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub model: String,
    pub splits: Vec<EvalReport>,
}

impl ModelEvaluation {
    pub fn split(&self, name: &str) -> Option<&EvalReport> {
        self.splits.iter().find(|s| s.split_name == name)
    }
}

/// Comparison of several models across splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub seed: u64,
    pub models: Vec<ModelEvaluation>,
}

impl ComparisonReport {
    pub fn model(&self, name: &str) -> Option<&ModelEvaluation> {
        self.models.iter().find(|m| m.model == name)
    }

    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.2}%"));
        let mut out = format!(
            "{:<6} {:<6} {:>5} {:>9} {:>8} {:>8} {:>9} {:>9} {:>8}\n",
            "model", "split", "n", "corr", "MAE", "RMSE", "RAE", "RRSE", "±0.012"
        );
        for m in &self.models {
            for s in &m.splits {
                writeln!(
                    out,
                    "{:<6} {:<6} {:>5} {:>9.4} {:>8.4} {:>8.4} {:>9} {:>9} {:>8.3}",
                    m.model,
                    s.split_name,
                    s.n,
                    s.pearson_r,
                    s.mae,
                    s.rmse,
                    pct(s.rae),
                    pct(s.rrse),
                    s.coverage_012
                )
                .unwrap();
            }
        }
        out
    }
}
