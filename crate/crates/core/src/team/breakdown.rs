//! Difficulty buckets and accept/reject frequencies.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::TrialLog;
use crate::error::Result;
use crate::knn::Method;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        })
    }
}

/// Buckets a trial by AI correctness and confidence:
///
/// | confidence   | AI correct | AI wrong |
/// |--------------|------------|----------|
/// | [0, 0.35)    | Easy       | Hard     |
/// | [0.35, 0.75) | Medium     | Medium   |
/// | [0.75, 1]    | Hard       | Easy     |
///
/// The correct-column ordering is kept exactly as published even though it
/// reads inverted.
pub fn difficulty_level(ai_correct: bool, confidence: f64) -> Difficulty {
    let band = if confidence < 0.35 {
        0
    } else if confidence < 0.75 {
        1
    } else {
        2
    };
    match (ai_correct, band) {
        (_, 1) => Difficulty::Medium,
        (true, 0) | (false, 2) => Difficulty::Easy,
        _ => Difficulty::Hard,
    }
}

/// Accept/reject rates for one group of responses. `None` fields mean "all".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub method: Method,
    pub ai_correct: Option<bool>,
    pub difficulty: Option<Difficulty>,
    pub responses: usize,
    pub accept_percent: f64,
    pub reject_percent: f64,
}

/// Rows per method for: all responses, each AI-correctness value, each
/// difficulty, and each (correctness, difficulty) pair. Empty groups are
/// omitted.
pub fn accept_reject_breakdown(log: &TrialLog) -> Vec<BreakdownRow> {
    type Key = (Method, Option<bool>, Option<Difficulty>);
    let mut tally: BTreeMap<Key, (usize, usize)> = BTreeMap::new();
    for e in &log.entries {
        let d = difficulty_level(e.ai_correct, e.ai_confidence);
        for r in &e.responses {
            for key in [
                (e.method, None, None),
                (e.method, Some(e.ai_correct), None),
                (e.method, None, Some(d)),
                (e.method, Some(e.ai_correct), Some(d)),
            ] {
                let t = tally.entry(key).or_default();
                t.0 += 1;
                t.1 += r.accepted as usize;
            }
        }
    }
    tally
        .into_iter()
        .map(|((method, ai_correct, difficulty), (n, accepted))| {
            let accept_percent = 100.0 * accepted as f64 / n as f64;
            BreakdownRow {
                method,
                ai_correct,
                difficulty,
                responses: n,
                accept_percent,
                reject_percent: 100.0 * (n - accepted) as f64 / n as f64,
            }
        })
        .collect()
}

pub fn breakdown_to_csv(rows: &[BreakdownRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "ai_correct", "difficulty", "responses", "accept", "reject"])?;
    for r in rows {
        w.write_record([
            r.method.as_str().to_string(),
            r.ai_correct.map_or("all".into(), |c| if c { "correct" } else { "wrong" }.to_string()),
            r.difficulty.map_or("all".into(), |d| d.to_string()),
            r.responses.to_string(),
            format!("{:.2}", r.accept_percent),
            format!("{:.2}", r.reject_percent),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 input"))
}
