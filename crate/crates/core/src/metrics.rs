//! Accuracy, reliability bins, expected calibration error, and
//! communication summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::CommLedger;
use crate::scalar::Scalar;

/// Default number of equal-width confidence bins.
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord<S> {
    pub probs: Vec<S>,
    pub label: usize,
    pub predicted: usize,
    pub confidence: S,
}

impl<S: Scalar> PredictionRecord<S> {
    /// Prediction is the arg-max, lowest index on ties.
    pub fn new(probs: Vec<S>, label: usize) -> Result<Self> {
        let (predicted, &confidence) = probs
            .iter()
            .enumerate()
            .fold(None::<(usize, &S)>, |best, (i, p)| match best {
                Some((_, b)) if *p <= *b => best,
                _ => Some((i, p)),
            })
            .ok_or_else(|| Error::arg("empty probability vector"))?;
        Ok(Self {
            probs,
            label,
            predicted,
            confidence,
        })
    }

    pub fn correct(&self) -> bool {
        self.predicted == self.label
    }
}

pub fn accuracy<S: Scalar>(records: &[PredictionRecord<S>]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::arg("accuracy of zero records"));
    }
    let hits = records.iter().filter(|r| r.correct()).count();
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin<S> {
    pub lower: S,
    pub upper: S,
    pub count: usize,
    /// Mean correctness in the bin, zero when empty.
    pub accuracy: S,
    /// Mean confidence in the bin, zero when empty.
    pub confidence: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport<S> {
    pub bins: Vec<ReliabilityBin<S>>,
    pub ece: S,
    pub total: usize,
}

/// Bin `o` covers `(o/O, (o+1)/O]`; confidence 0 falls in the first bin.
fn bin_of<S: Scalar>(c: S, bins: usize) -> usize {
    let n = S::of_usize(bins);
    let edge = |o: usize| S::of_usize(o) / n;
    let mut o = (c * n).ceil().to_usize().unwrap_or(0).saturating_sub(1).min(bins - 1);
    while o > 0 && c <= edge(o) {
        o -= 1;
    }
    while o + 1 < bins && c > edge(o + 1) {
        o += 1;
    }
    o
}

pub fn reliability_bins<S: Scalar>(
    records: &[PredictionRecord<S>],
    bins: usize,
) -> Result<ReliabilityReport<S>> {
    if bins < 1 {
        return Err(Error::arg("need at least one bin"));
    }
    let mut counts = vec![0usize; bins];
    let mut hits = vec![S::zero(); bins];
    let mut conf = vec![S::zero(); bins];
    for r in records {
        let o = bin_of(r.confidence, bins);
        counts[o] += 1;
        if r.correct() {
            hits[o] += S::one();
        }
        conf[o] += r.confidence;
    }
    let n = S::of_usize(bins);
    let table = (0..bins)
        .map(|o| {
            let c = counts[o];
            let (accuracy, confidence) = if c == 0 {
                (S::zero(), S::zero())
            } else {
                (hits[o] / S::of_usize(c), conf[o] / S::of_usize(c))
            };
            ReliabilityBin {
                lower: S::of_usize(o) / n,
                upper: S::of_usize(o + 1) / n,
                count: c,
                accuracy,
                confidence,
            }
        })
        .collect();
    let mut report = ReliabilityReport {
        bins: table,
        ece: S::zero(),
        total: records.len(),
    };
    if report.total > 0 {
        report.ece = ece(&report)?;
    }
    Ok(report)
}

/// `Σ_o |B_o| / N · |acc(B_o) - conf(B_o)|`.
pub fn ece<S: Scalar>(report: &ReliabilityReport<S>) -> Result<S> {
    let total: usize = report.bins.iter().map(|b| b.count).sum();
    if total == 0 {
        return Err(Error::arg("expected calibration error of an empty report"));
    }
    let n = S::of_usize(total);
    Ok(report
        .bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| S::of_usize(b.count) / n * (b.accuracy - b.confidence).abs())
        .sum())
}

impl<S: Scalar> ReliabilityReport<S> {
    /// Writes `lower,upper,count,accuracy,confidence` rows and an `ece`
    /// footer.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "lower,upper,count,accuracy,confidence")?;
        for b in &self.bins {
            writeln!(
                out,
                "{},{},{},{},{}",
                b.lower.as_f64(),
                b.upper.as_f64(),
                b.count,
                b.accuracy.as_f64(),
                b.confidence.as_f64()
            )?;
        }
        writeln!(out, "ece,,{},{},", self.total, self.ece.as_f64())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommSummary {
    /// Transmitted values relative to the baseline.
    pub values_ratio: f64,
    /// `100 · (1 - values_ratio)`.
    pub savings_percent: f64,
    /// Ratio when index bytes are charged as well.
    pub bytes_ratio: f64,
}

pub fn comm_summary(ledger: &CommLedger, baseline: &CommLedger) -> Result<CommSummary> {
    ratio_summary(
        ledger.total_values,
        ledger.total_bytes(),
        baseline.total_values,
        baseline.total_bytes(),
    )
}

/// Same as [`comm_summary`] from raw totals.
pub fn ratio_summary(values: u64, bytes: u64, base_values: u64, base_bytes: u64) -> Result<CommSummary> {
    if base_values == 0 || base_bytes == 0 {
        return Err(Error::arg("baseline ledger carries no traffic"));
    }
    let values_ratio = values as f64 / base_values as f64;
    Ok(CommSummary {
        values_ratio,
        savings_percent: 100.0 * (1.0 - values_ratio),
        bytes_ratio: bytes as f64 / base_bytes as f64,
    })
}
