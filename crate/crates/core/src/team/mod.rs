//! Human-AI team analytics over accept/reject trial logs.

mod breakdown;
mod mwu;
mod sweep;
mod users;

pub use breakdown::{accept_reject_breakdown, breakdown_to_csv, difficulty_level, BreakdownRow, Difficulty};
pub use mwu::{mann_whitney_u, MannWhitney, PValueMethod, EXACT_MAX_SIDE};
pub use sweep::{default_thresholds, team_accuracy, threshold_sweep, SweepRow, SweepTable};
pub use users::{user_accuracy, MethodAccuracy, UserAccuracy, UserAccuracyReport, DEFAULT_EXCLUSION_THRESHOLD};

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::Method;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub user_id: String,
    pub accepted: bool,
}

impl Response {
    /// A user is right when they accept a correct prediction or reject a wrong one.
    pub fn is_correct(&self, ai_correct: bool) -> bool {
        self.accepted == ai_correct
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub query_id: String,
    pub method: Method,
    /// Top-1 vote share, in `(0, 1]`.
    pub ai_confidence: f64,
    pub ai_correct: bool,
    pub responses: Vec<Response>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub entries: Vec<TrialEntry>,
}

pub const LOG_HEADER: [&str; 6] = ["query_id", "method", "ai_confidence", "ai_correct", "user_id", "accepted"];

fn parse_bool(s: &str, line: usize) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(Error::Parse {
            line,
            msg: format!("expected a boolean, got {other:?}"),
        }),
    }
}

impl TrialLog {
    pub fn new(entries: Vec<TrialEntry>) -> Result<Self> {
        let log = Self { entries };
        log.validate()?;
        Ok(log)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !(e.ai_confidence > 0.0 && e.ai_confidence <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "query {} has confidence {} outside (0, 1]",
                    e.query_id, e.ai_confidence
                )));
            }
        }
        Ok(())
    }

    pub fn for_method(&self, method: Method) -> Self {
        Self {
            entries: self.entries.iter().filter(|e| e.method == method).cloned().collect(),
        }
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.entries.iter().map(|e| e.method).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn response_count(&self) -> usize {
        self.entries.iter().map(|e| e.responses.len()).sum()
    }

    /// Reads CSV rows, one per response. A row with empty `user_id` and
    /// `accepted` records a query nobody answered. Rows for the same
    /// `(query_id, method)` must agree on confidence and correctness.
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != LOG_HEADER {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header {}, got {}", LOG_HEADER.join(","), header.join(",")),
            });
        }
        let mut index: BTreeMap<(String, Method), usize> = BTreeMap::new();
        let mut entries: Vec<TrialEntry> = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row?;
            let method: Method = row[1].parse().map_err(|e: Error| Error::Parse { line, msg: e.to_string() })?;
            let ai_confidence: f64 = row[2].parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad confidence {:?}", &row[2]),
            })?;
            let ai_correct = parse_bool(&row[3], line)?;
            let key = (row[0].to_string(), method);
            let slot = *index.entry(key).or_insert_with(|| {
                entries.push(TrialEntry {
                    query_id: row[0].to_string(),
                    method,
                    ai_confidence,
                    ai_correct,
                    responses: Vec::new(),
                });
                entries.len() - 1
            });
            let entry = &mut entries[slot];
            if entry.ai_confidence != ai_confidence || entry.ai_correct != ai_correct {
                return Err(Error::Parse {
                    line,
                    msg: format!("query {} disagrees with its earlier rows", &row[0]),
                });
            }
            match (row[4].is_empty(), row[5].is_empty()) {
                (true, true) => {}
                (false, false) => entry.responses.push(Response {
                    user_id: row[4].to_string(),
                    accepted: parse_bool(&row[5], line)?,
                }),
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: "user_id and accepted must both be set or both empty".into(),
                    })
                }
            }
        }
        Self::new(entries)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        Self::read_csv(text.as_bytes())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(LOG_HEADER)?;
        for e in &self.entries {
            let conf = e.ai_confidence.to_string();
            let correct = if e.ai_correct { "1" } else { "0" };
            if e.responses.is_empty() {
                w.write_record([e.query_id.as_str(), e.method.as_str(), &conf, correct, "", ""])?;
            }
            for r in &e.responses {
                w.write_record([
                    e.query_id.as_str(),
                    e.method.as_str(),
                    &conf,
                    correct,
                    &r.user_id,
                    if r.accepted { "1" } else { "0" },
                ])?;
            }
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 input"))
    }
}

/// Formats an optional percentage the way the tables print missing cells.
pub(crate) fn cell(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.decimals$}"))
}
