//! Confidence-threshold deferral: the AI decides alone when its confidence is
//! at least `T`, otherwise a human accepts or rejects its label.

use serde::{Deserialize, Serialize};

use super::{cell, TrialLog};
use crate::error::{Error, Result};

/// Accuracies are percentages; `ai_fraction` is in `[0, 1]`. A side with no
/// queries (or no responses) is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub ai_accuracy: Option<f64>,
    pub ai_fraction: f64,
    pub human_accuracy: Option<f64>,
    /// `ai_fraction * ai + (1 - ai_fraction) * human`; equals the defined side
    /// when the other is empty.
    pub team_accuracy: Option<f64>,
}

impl SweepRow {
    pub fn both_sides(&self) -> bool {
        self.ai_accuracy.is_some() && self.human_accuracy.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Index into `rows` of the best team accuracy among rows with both sides
    /// defined; ties go to the smallest threshold.
    pub best: Option<usize>,
}

impl SweepTable {
    pub fn best_row(&self) -> Option<&SweepRow> {
        self.best.map(|i| &self.rows[i])
    }

    /// Columns: threshold, AI accuracy, fraction handled by AI, human accuracy, team accuracy.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["threshold", "ai_accuracy", "ai_fraction", "human_accuracy", "team_accuracy"])?;
        for r in &self.rows {
            w.write_record([
                format!("{:.2}", r.threshold),
                cell(r.ai_accuracy, 2),
                format!("{:.4}", r.ai_fraction),
                cell(r.human_accuracy, 2),
                cell(r.team_accuracy, 2),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 input"))
    }
}

/// `0.00, 0.05, ..., 1.00`.
/// Team accuracies closer than this (in percentage points) count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

pub fn default_thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

pub fn team_accuracy(log: &TrialLog, threshold: f64) -> Result<SweepRow> {
    if log.entries.is_empty() {
        return Err(Error::InvalidArgument("empty trial log".into()));
    }
    let (mut ai_n, mut ai_ok) = (0usize, 0usize);
    let (mut human_n, mut human_ok) = (0usize, 0usize);
    for e in &log.entries {
        if e.ai_confidence >= threshold {
            ai_n += 1;
            ai_ok += e.ai_correct as usize;
        } else {
            human_n += e.responses.len();
            human_ok += e.responses.iter().filter(|r| r.is_correct(e.ai_correct)).count();
        }
    }
    let pct = |ok: usize, n: usize| (n > 0).then(|| 100.0 * ok as f64 / n as f64);
    let ai_accuracy = pct(ai_ok, ai_n);
    let human_accuracy = pct(human_ok, human_n);
    let ai_fraction = ai_n as f64 / log.entries.len() as f64;
    let team_accuracy = match (ai_accuracy, human_accuracy) {
        (Some(a), Some(h)) => Some(ai_fraction * a + (1.0 - ai_fraction) * h),
        (Some(a), None) if ai_fraction == 1.0 => Some(a),
        (None, Some(h)) => Some(h),
        _ => None,
    };
    Ok(SweepRow {
        threshold,
        ai_accuracy,
        ai_fraction,
        human_accuracy,
        team_accuracy,
    })
}

pub fn threshold_sweep(log: &TrialLog, thresholds: &[f64]) -> Result<SweepTable> {
    let mut rows = thresholds
        .iter()
        .map(|&t| team_accuracy(log, t))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if !r.both_sides() {
            continue;
        }
        let t = r.team_accuracy.expect("both sides defined");
        if best.is_none_or(|b| t > rows[b].team_accuracy.expect("both sides defined") + TIE_TOLERANCE) {
            best = Some(i);
        }
    }
    Ok(SweepTable { rows, best })
}
