//! Thresholding and confusion-matrix metrics over binary windows.
//!
//! Counts are aggregated globally over cells (micro averaging). Accuracy is
//! the standard `(tp + tn) / total`. Sensitivity and PPV are defined as 1
//! when their denominator is zero, so silent windows do not poison the
//! aggregate.

use std::io::Write;
use std::ops::{Add, AddAssign};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::MusicModel;
use crate::window::{WindowPair, WindowSpec};

/// Anything that maps an input window to per-cell output probabilities.
pub trait WindowPredictor: Sync {
    fn window_spec(&self) -> WindowSpec;
    fn predict_window(&self, x: &[u8]) -> Result<Vec<f64>>;
}

impl WindowPredictor for MusicModel {
    fn window_spec(&self) -> WindowSpec {
        self.window
    }

    /// Deterministic inference: decodes the posterior mean.
    fn predict_window(&self, x: &[u8]) -> Result<Vec<f64>> {
        self.predict(x)
    }
}

/// Cell is on iff its probability is strictly above `theta`.
pub fn apply_threshold(probs: &[f64], theta: f64) -> Vec<u8> {
    probs.iter().map(|&p| (p > theta) as u8).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn predicted_positive(&self) -> u64 {
        self.tp + self.fp
    }

    fn record(&mut self, pred: bool, truth: bool) {
        match (pred, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Cell-wise comparison of two binary vectors.
pub fn confusion(pred: &[u8], target: &[u8]) -> Result<ConfusionCounts> {
    check_len("confusion target", pred.len(), target.len())?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(target) {
        c.record(p != 0, t != 0);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub acc: f64,
    pub sen: f64,
    pub ppv: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
}

/// ACC, SEN, PPV and F1 for a set of counts.
pub fn metrics(counts: ConfusionCounts, threshold: f64) -> Result<MetricsReport> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::EmptyCounts);
    }
    let ratio = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let acc = (counts.tp + counts.tn) as f64 / total as f64;
    let sen = ratio(counts.tp, counts.tp + counts.fn_);
    let ppv = ratio(counts.tp, counts.tp + counts.fp);
    let f1 = if sen + ppv > 0.0 { 2.0 * sen * ppv / (sen + ppv) } else { 0.0 };
    Ok(MetricsReport {
        threshold,
        acc,
        sen,
        ppv,
        f1,
        counts,
    })
}

/// 0.05, 0.07, ..., 0.95.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=45).map(|k| f64::from(5 + 2 * k) / 100.0).collect()
}

/// Sorts ascending and removes duplicates; every value must lie in [0, 1].
pub fn normalize_grid(thresholds: &[f64]) -> Result<Vec<f64>> {
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("empty threshold grid".into()));
    }
    if let Some(bad) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidConfig(format!("threshold {bad} outside [0, 1]")));
    }
    let mut grid = thresholds.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

/// Counts per window column (summed over pitches and pairs), one vector per
/// threshold.
fn column_confusion<P: WindowPredictor + ?Sized>(
    model: &P,
    pairs: &[WindowPair],
    thresholds: &[f64],
) -> Result<Vec<Vec<ConfusionCounts>>> {
    let width = model.window_spec().width();
    let zero = || vec![vec![ConfusionCounts::default(); width]; thresholds.len()];
    pairs
        .par_iter()
        .map(|pair| {
            let probs = model.predict_window(&pair.x)?;
            check_len("prediction", pair.y.len(), probs.len())?;
            let mut acc = zero();
            for (i, (&p, &t)) in probs.iter().zip(&pair.y).enumerate() {
                let col = i % width;
                for (k, &theta) in thresholds.iter().enumerate() {
                    acc[k][col].record(p > theta, t != 0);
                }
            }
            Ok(acc)
        })
        .try_reduce(zero, |mut a, b| {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (ca, cb) in ra.iter_mut().zip(rb) {
                    *ca += cb;
                }
            }
            Ok(a)
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub train: MetricsReport,
    pub test: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Ascending by threshold.
    pub rows: Vec<SweepRow>,
    /// Highest training F1; ties go to the lower threshold.
    pub best_threshold: f64,
}

impl SweepResult {
    pub fn best(&self) -> &SweepRow {
        self.rows
            .iter()
            .find(|r| r.threshold == self.best_threshold)
            .expect("best threshold is one of the rows")
    }
}

/// Full-window metrics at every threshold, for both sides of a split.
pub fn sweep<P: WindowPredictor + ?Sized>(
    model: &P,
    train_pairs: &[WindowPair],
    test_pairs: &[WindowPair],
    thresholds: &[f64],
) -> Result<SweepResult> {
    if train_pairs.is_empty() || test_pairs.is_empty() {
        return Err(Error::InvalidConfig("sweep needs non-empty train and test pairs".into()));
    }
    let grid = normalize_grid(thresholds)?;
    let full = |pairs| -> Result<Vec<ConfusionCounts>> {
        Ok(column_confusion(model, pairs, &grid)?
            .into_iter()
            .map(|cols| cols.into_iter().sum())
            .collect())
    };
    let train = full(train_pairs)?;
    let test = full(test_pairs)?;
    let mut rows = Vec::with_capacity(grid.len());
    for (k, &theta) in grid.iter().enumerate() {
        rows.push(SweepRow {
            threshold: theta,
            train: metrics(train[k], theta)?,
            test: metrics(test[k], theta)?,
        });
    }
    let mut best = &rows[0];
    for row in &rows[1..] {
        if row.train.f1 > best.train.f1 {
            best = row;
        }
    }
    let best_threshold = best.threshold;
    Ok(SweepResult { rows, best_threshold })
}

/// Metrics over the whole output window.
pub fn window_metrics<P: WindowPredictor + ?Sized>(
    model: &P,
    pairs: &[WindowPair],
    theta: f64,
) -> Result<MetricsReport> {
    let cols = column_confusion(model, pairs, &[theta])?.remove(0);
    metrics(cols.into_iter().sum(), theta)
}

/// Reconstruction metrics (the first `W - stride` output columns, which
/// re-state the input) and prediction metrics (the last `stride` columns).
pub fn split_metrics<P: WindowPredictor + ?Sized>(
    model: &P,
    pairs: &[WindowPair],
    theta: f64,
) -> Result<(MetricsReport, MetricsReport)> {
    let overlap = model.window_spec().overlap();
    let cols = column_confusion(model, pairs, &[theta])?.remove(0);
    let recon = cols[..overlap].iter().copied().sum();
    let pred = cols[overlap..].iter().copied().sum();
    Ok((metrics(recon, theta)?, metrics(pred, theta)?))
}

/// One report per predicted column (100 ms each), nearest the known music first.
pub fn per_step_metrics<P: WindowPredictor + ?Sized>(
    model: &P,
    pairs: &[WindowPair],
    theta: f64,
) -> Result<Vec<MetricsReport>> {
    let overlap = model.window_spec().overlap();
    let cols = column_confusion(model, pairs, &[theta])?.remove(0);
    cols[overlap..].iter().map(|&c| metrics(c, theta)).collect()
}

/// One CSV line of an exported report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub side: String,
    pub segment: String,
    pub report: MetricsReport,
}

impl ReportRow {
    pub fn new(side: &str, segment: &str, report: MetricsReport) -> Self {
        Self {
            side: side.to_owned(),
            segment: segment.to_owned(),
            report,
        }
    }
}

/// Writes `threshold,side,segment,tp,fp,tn,fn,acc,sen,ppv,f1` rows;
/// `acc` is standard accuracy, `(tp + tn) / total`.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "threshold,side,segment,tp,fp,tn,fn,acc,sen,ppv,f1")?;
    for row in rows {
        let r = &row.report;
        let c = &r.counts;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.threshold, row.side, row.segment, c.tp, c.fp, c.tn, c.fn_, r.acc, r.sen, r.ppv, r.f1
        )?;
    }
    Ok(())
}
