//! AUROC, Brier score and expected calibration error over
//! (confidence, correctness) pairs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::QuestionRecord;
use crate::estimators::{ConfidenceReport, Estimator};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub question_id: String,
    pub confidence: f64,
    pub correct: bool,
}

impl CalibrationRecord {
    pub fn new(question_id: impl Into<String>, confidence: f64, correct: bool) -> Self {
        Self {
            question_id: question_id.into(),
            confidence,
            correct,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("no records to evaluate")]
    Empty,
    #[error("AUROC is undefined: every record is {}", if *.0 { "correct" } else { "incorrect" })]
    SingleClass(bool),
    #[error("bin count must be at least 1")]
    Bins,
    #[error("confidence {confidence} for question {question_id} is outside [0, 1]")]
    OutOfRange { question_id: String, confidence: f64 },
}

fn check(records: &[CalibrationRecord]) -> Result<(), CalibrationError> {
    if records.is_empty() {
        return Err(CalibrationError::Empty);
    }
    if let Some(r) = records
        .iter()
        .find(|r| !(0.0..=1.0).contains(&r.confidence))
    {
        return Err(CalibrationError::OutOfRange {
            question_id: r.question_id.clone(),
            confidence: r.confidence,
        });
    }
    Ok(())
}

/// Mann-Whitney AUROC with ties counted one half.
///
/// Sorts once and counts in integers, so the result equals brute-force pair
/// counting bit for bit.
pub fn auroc(records: &[CalibrationRecord]) -> Result<f64, CalibrationError> {
    check(records)?;
    let positives = records.iter().filter(|r| r.correct).count() as u64;
    let negatives = records.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(CalibrationError::SingleClass(positives > 0));
    }
    let mut sorted: Vec<(f64, bool)> = records.iter().map(|r| (r.confidence, r.correct)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // twice the U statistic: 2 per strictly lower negative, 1 per tied one
    let mut twice_u: u128 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let group = &sorted[i..j];
        let pos = group.iter().filter(|(_, c)| *c).count() as u64;
        let neg = group.len() as u64 - pos;
        twice_u += u128::from(pos) * u128::from(2 * negatives_below + neg);
        negatives_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}

pub fn brier(records: &[CalibrationRecord]) -> Result<f64, CalibrationError> {
    check(records)?;
    let total: f64 = records
        .iter()
        .map(|r| {
            let label = if r.correct { 1.0 } else { 0.0 };
            (r.confidence - label).powi(2)
        })
        .sum();
    Ok(total / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Equal-width bin of a confidence; 1.0 falls in the last bin.
fn bin_of(confidence: f64, bins: usize) -> usize {
    ((confidence * bins as f64).floor() as usize).min(bins - 1)
}

pub fn bin_stats(records: &[CalibrationRecord], bins: usize) -> Result<Vec<BinStat>, CalibrationError> {
    check(records)?;
    if bins == 0 {
        return Err(CalibrationError::Bins);
    }
    let mut sums = vec![(0usize, 0.0f64, 0usize); bins];
    for r in records {
        let b = &mut sums[bin_of(r.confidence, bins)];
        b.0 += 1;
        b.1 += r.confidence;
        b.2 += usize::from(r.correct);
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(i, (count, conf, correct))| BinStat {
            lower: i as f64 / bins as f64,
            upper: (i + 1) as f64 / bins as f64,
            count,
            mean_confidence: (count > 0).then(|| conf / count as f64),
            accuracy: (count > 0).then(|| correct as f64 / count as f64),
        })
        .collect())
}

pub fn ece(records: &[CalibrationRecord], bins: usize) -> Result<f64, CalibrationError> {
    let stats = bin_stats(records, bins)?;
    let n = records.len() as f64;
    Ok(stats
        .iter()
        .filter_map(|b| {
            let gap = (b.accuracy? - b.mean_confidence?).abs();
            Some(b.count as f64 / n * gap)
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub estimator: Estimator,
    /// Questions evaluated.
    pub n: usize,
    /// Questions left out for lack of a gold answer.
    pub skipped: usize,
    /// `None` when every evaluated answer was right, or every one wrong.
    pub auroc: Option<f64>,
    pub brier: f64,
    pub ece: f64,
    pub bin_stats: Vec<BinStat>,
}

impl MetricsReport {
    pub fn from_records(
        estimator: Estimator,
        records: &[CalibrationRecord],
        skipped: usize,
        bins: usize,
    ) -> Result<Self, CalibrationError> {
        let auroc = match auroc(records) {
            Ok(v) => Some(v),
            Err(CalibrationError::SingleClass(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            estimator,
            n: records.len(),
            skipped,
            auroc,
            brier: brier(records)?,
            ece: ece(records, bins)?,
            bin_stats: bin_stats(records, bins)?,
        })
    }
}

/// One record per question with a gold answer: the report's designated
/// (argmax) answer, its confidence, and whether it matches gold. Returns the
/// records and the number of questions skipped for missing gold.
pub fn calibration_records(
    dataset: &[QuestionRecord],
    reports: &[ConfidenceReport],
) -> (Vec<CalibrationRecord>, usize) {
    let by_id: BTreeMap<&str, &ConfidenceReport> =
        reports.iter().map(|r| (r.question_id.as_str(), r)).collect();
    let mut records = Vec::new();
    let mut skipped = 0;
    for question in dataset {
        let Some(report) = by_id.get(question.question_id()) else {
            continue;
        };
        let Some((answer, confidence)) = report.designated() else {
            continue;
        };
        match question.is_correct(answer) {
            Some(correct) => {
                records.push(CalibrationRecord::new(question.question_id(), confidence, correct))
            }
            None => skipped += 1,
        }
    }
    (records, skipped)
}

/// Estimators down the side, metrics across, as plain text.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut out = format!(
        "{:<20} {:>7} {:>7} {:>7} {:>6}\n",
        "estimator", "AUROC", "Brier", "ECE", "n"
    );
    for r in reports {
        let auroc = r
            .auroc
            .map_or_else(|| "n/a".to_string(), |v| format!("{:.1}", 100.0 * v));
        out.push_str(&format!(
            "{:<20} {:>7} {:>7.1} {:>7.1} {:>6}\n",
            r.estimator.name(),
            auroc,
            100.0 * r.brier,
            100.0 * r.ece,
            r.n
        ));
    }
    out
}

/// CSV with one row per estimator.
pub fn write_metrics_csv<W: std::io::Write>(
    reports: &[MetricsReport],
    writer: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["estimator", "n", "skipped", "auroc", "brier", "ece"])?;
    for r in reports {
        w.write_record([
            r.estimator.name().to_string(),
            r.n.to_string(),
            r.skipped.to_string(),
            r.auroc.map(|v| v.to_string()).unwrap_or_default(),
            r.brier.to_string(),
            r.ece.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
