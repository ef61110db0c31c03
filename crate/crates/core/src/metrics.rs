//! Individual-level stability diagnostics and their summaries.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView1;
use serde::Serialize;

use crate::data::RiskDataset;
use crate::error::{Error, Result};
use crate::harness::{align_rows, PredictionMatrix};
use crate::math::{bce, mean, sample_sd};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const N_BINS: usize = 10;

/// Type-7 sample quantile of already sorted values: linear interpolation
/// between order statistics at position `h = p (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    match sorted.get(lo + 1) {
        Some(&next) if frac > 0.0 => sorted[lo] + frac * (next - sorted[lo]),
        _ => sorted[lo],
    }
}

/// Width of the central `1 - alpha` empirical interval of one individual's
/// predictions across runs.
pub fn epiw(predictions: &[f64], alpha: f64) -> Result<f64> {
    if predictions.len() < 2 {
        return Err(Error::InsufficientRuns {
            available: predictions.len(),
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(
            "metrics.alpha",
            "must lie strictly between 0 and 1",
        ));
    }
    let mut sorted = predictions.to_vec();
    sorted.sort_by(f64::total_cmp);
    let width = quantile_sorted(&sorted, 1.0 - alpha / 2.0) - quantile_sorted(&sorted, alpha / 2.0);
    Ok(width.max(0.0))
}

/// `1{prediction >= tau}`.
pub fn decision(prediction: f64, tau: f64) -> u8 {
    u8::from(prediction >= tau)
}

/// Flip rate from the number of positive decisions `k` among `runs`.
pub fn edfr_from_count(k: usize, runs: usize) -> f64 {
    debug_assert!(runs >= 2 && k <= runs);
    (2 * k * (runs - k)) as f64 / (runs * (runs - 1)) as f64
}

/// Fraction of distinct run pairs whose decisions at `tau` disagree.
pub fn edfr(predictions: &[f64], tau: f64) -> Result<f64> {
    if predictions.len() < 2 {
        return Err(Error::InsufficientRuns {
            available: predictions.len(),
        });
    }
    let k = predictions
        .iter()
        .filter(|&&p| decision(p, tau) == 1)
        .count();
    Ok(edfr_from_count(k, predictions.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunPerformance {
    pub run_index: usize,
    pub bce: f64,
    pub accuracy: f64,
}

/// Per-run test performance plus mean and sample SD across runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerformanceSummary {
    pub per_run: Vec<RunPerformance>,
    pub bce_mean: f64,
    pub bce_sd: f64,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
}

/// Labels are looked up by test id, so `test` may list rows in any order.
pub fn aggregate_performance(
    matrix: &PredictionMatrix,
    test: &RiskDataset,
    tau: f64,
) -> Result<PerformanceSummary> {
    let rows = align_rows(matrix, test)?;
    let labels: Vec<f64> = rows.iter().map(|&r| test.labels()[r]).collect();
    let per_run: Vec<RunPerformance> = (0..matrix.n_runs())
        .map(|b| {
            column_performance(
                matrix.column(b),
                &labels,
                tau,
                matrix.run_meta()[b].run_index,
            )
        })
        .collect();
    let bces: Vec<f64> = per_run.iter().map(|r| r.bce).collect();
    let accs: Vec<f64> = per_run.iter().map(|r| r.accuracy).collect();
    Ok(PerformanceSummary {
        bce_mean: mean(&bces),
        bce_sd: sd_or_zero(&bces),
        accuracy_mean: mean(&accs),
        accuracy_sd: sd_or_zero(&accs),
        per_run,
    })
}

fn sd_or_zero(v: &[f64]) -> f64 {
    if v.len() < 2 {
        0.0
    } else {
        sample_sd(v)
    }
}

fn column_performance(
    col: ArrayView1<'_, f64>,
    labels: &[f64],
    tau: f64,
    run_index: usize,
) -> RunPerformance {
    let n = labels.len() as f64;
    let total: f64 = col.iter().zip(labels).map(|(&p, &y)| bce(p, y)).sum();
    let correct = col
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| f64::from(decision(p, tau)) == y)
        .count();
    RunPerformance {
        run_index,
        bce: total / n,
        accuracy: correct as f64 / n,
    }
}

/// Diagnostics for one test individual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRecord {
    pub id: u64,
    pub true_risk: Option<f64>,
    /// Mean prediction across runs.
    pub developed_risk: f64,
    /// True risk when known, otherwise the developed risk.
    pub reference_risk: f64,
    pub epiw: f64,
    pub edfr: f64,
    /// Mean prediction minus true risk.
    pub bias: Option<f64>,
    /// Mean squared deviation of the predictions from true risk.
    pub mse: Option<f64>,
    /// Population (1/B) variance of the predictions.
    pub variance: f64,
}

/// One record per matrix row. `true_risk`, if given, is aligned with the
/// matrix rows.
pub fn stability_report(
    matrix: &PredictionMatrix,
    tau: f64,
    alpha: f64,
    true_risk: Option<&[f64]>,
) -> Result<Vec<StabilityRecord>> {
    if let Some(t) = true_risk {
        if t.len() != matrix.n_test() {
            return Err(Error::Join(format!(
                "{} true-risk values for {} matrix rows",
                t.len(),
                matrix.n_test()
            )));
        }
    }
    let mut records = Vec::with_capacity(matrix.n_test());
    for (i, &id) in matrix.test_ids().iter().enumerate() {
        let row = matrix.row(i).to_vec();
        let developed = mean(&row);
        let variance = row.iter().map(|p| (p - developed).powi(2)).sum::<f64>() / row.len() as f64;
        let truth = true_risk.map(|t| t[i]);
        records.push(StabilityRecord {
            id,
            true_risk: truth,
            developed_risk: developed,
            reference_risk: truth.unwrap_or(developed),
            epiw: epiw(&row, alpha)?,
            edfr: edfr(&row, tau)?,
            bias: truth.map(|t| developed - t),
            mse: truth.map(|t| row.iter().map(|p| (p - t).powi(2)).sum::<f64>() / row.len() as f64),
            variance,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Epiw,
    Edfr,
    Bias,
    Mse,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::Epiw, Field::Edfr, Field::Bias, Field::Mse];

    pub fn as_str(self) -> &'static str {
        match self {
            Field::Epiw => "epiw",
            Field::Edfr => "edfr",
            Field::Bias => "bias",
            Field::Mse => "mse",
        }
    }

    fn value(self, r: &StabilityRecord) -> Option<f64> {
        match self {
            Field::Epiw => Some(r.epiw),
            Field::Edfr => Some(r.edfr),
            Field::Bias => r.bias,
            Field::Mse => r.mse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BinBy {
    TrueRisk,
    DevelopedRisk,
}

impl BinBy {
    pub fn as_str(self) -> &'static str {
        match self {
            BinBy::TrueRisk => "true_risk",
            BinBy::DevelopedRisk => "developed_risk",
        }
    }
}

impl fmt::Display for BinBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BinBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "true_risk" => Ok(BinBy::TrueRisk),
            "developed_risk" => Ok(BinBy::DevelopedRisk),
            other => Err(Error::config(
                "metrics.bin_by",
                format!("unknown value `{other}` (expected true_risk or developed_risk)"),
            )),
        }
    }
}

/// Ten equal-width bins over [0, 1]; the last bin includes 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedSummary {
    pub field: Field,
    pub by: BinBy,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// `None` for empty bins.
    pub means: Vec<Option<f64>>,
}

pub fn bin_edges() -> Vec<f64> {
    (0..=N_BINS).map(|i| i as f64 / N_BINS as f64).collect()
}

pub fn bin_index(risk: f64) -> usize {
    ((risk * N_BINS as f64).floor() as usize).min(N_BINS - 1)
}

pub fn binned_summary(
    records: &[StabilityRecord],
    field: Field,
    by: BinBy,
) -> Result<BinnedSummary> {
    let mut sums = [0.0; N_BINS];
    let mut counts = vec![0usize; N_BINS];
    for r in records {
        let key = match by {
            BinBy::TrueRisk => r.true_risk.ok_or_else(|| {
                Error::config(
                    "metrics.bin_by",
                    "true_risk binning needs true risk for every test row",
                )
            })?,
            BinBy::DevelopedRisk => r.developed_risk,
        };
        if !(0.0..=1.0).contains(&key) {
            return Err(Error::InvalidDataset(format!(
                "risk {key} for id {} lies outside [0,1]",
                r.id
            )));
        }
        let v = field.value(r).ok_or_else(|| {
            Error::config(
                "metrics.fields",
                format!("{} needs true risk for every test row", field.as_str()),
            )
        })?;
        let bin = bin_index(key);
        sums[bin] += v;
        counts[bin] += 1;
    }
    Ok(BinnedSummary {
        field,
        by,
        edges: bin_edges(),
        means: sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect(),
        counts,
    })
}

impl BinnedSummary {
    /// Count-weighted mean over bins whose lower edge lies in `[lo, hi)`.
    pub fn mean_over(&self, lo: f64, hi: f64) -> Option<f64> {
        let (mut s, mut c) = (0.0, 0usize);
        for b in 0..N_BINS {
            let lower = self.edges[b];
            if lower >= lo - 1e-12 && lower < hi - 1e-12 {
                if let Some(m) = self.means[b] {
                    s += m * self.counts[b] as f64;
                    c += self.counts[b];
                }
            }
        }
        (c > 0).then(|| s / c as f64)
    }

    /// Populated bin with the largest mean (first one on ties).
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (b, m) in self.means.iter().enumerate() {
            if let Some(m) = *m {
                if best.is_none_or(|(_, v)| m > v) {
                    best = Some((b, m));
                }
            }
        }
        best.map(|(b, _)| b)
    }

    /// CSV with columns `bin,lower,upper,count,mean`; empty bins leave `mean` blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,lower,upper,count,mean\n");
        for b in 0..N_BINS {
            let mean = self.means[b].map(|m| m.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{b},{},{},{},{mean}\n",
                self.edges[b],
                self.edges[b + 1],
                self.counts[b]
            ));
        }
        out
    }
}
