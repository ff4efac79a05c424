//! User-facing explanation payloads and their canonical text form.
//!
//! A record shows up to five gallery images of the predicted class, in
//! (re-)ranked order, each optionally annotated with the patch pairs that
//! drove its score. Patches are addressed as `(row, col)` on the model grid;
//! renderers scale cells to pixels.
//!
//! The document is compact JSON with keys in lexicographic order and scores
//! printed with exactly six decimals:
//!
//! ```text
//! {"confidence_percent":90,"grid":7,"label":3,"label_name":"..","method":"emd_corr","query_id":"..",
//!  "supports":[{"boxes":[{"q":[r,c],"s":[r,c],"score":0.123456}],"image_id":"..","rank":0}]}
//! ```
//!
//! `boxes` keys are omitted entirely when boxes are hidden.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corr::RerankResult;
use crate::error::{Error, Result};
use crate::knn::{Method, Prediction};

/// Most support images shown per explanation.
pub const MAX_SUPPORTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPair {
    pub query_patch: (usize, usize),
    pub support_patch: (usize, usize),
    /// Flow (EMD-Corr) or cosine similarity (CHM-Corr).
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportImage {
    pub image_id: String,
    /// Position among the shown images of the predicted class, from 0.
    pub rank: usize,
    pub boxes: Vec<BoxPair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub query_id: String,
    pub method: Method,
    pub label: u32,
    pub label_name: String,
    pub confidence_percent: u32,
    pub grid: usize,
    pub supports: Vec<SupportImage>,
    pub show_boxes: bool,
}

/// `round(100 * count / k)`.
pub fn confidence_percent(count: usize, k: usize) -> u32 {
    (100.0 * count as f64 / k as f64).round() as u32
}

/// Assembles the explanation for `prediction`. Boxes come from `rerank` and
/// are dropped when `hide_boxes` is set or the method has no patch evidence.
pub fn build_explanation(
    query_id: &str,
    prediction: &Prediction,
    rerank: Option<&[RerankResult]>,
    label_name: &str,
    grid: usize,
    hide_boxes: bool,
) -> Result<ExplanationRecord> {
    if prediction.support.is_empty() {
        return Err(Error::InvalidArgument("prediction has no support neighbors".into()));
    }
    let show_boxes = !hide_boxes && prediction.method != Method::Knn && rerank.is_some();
    let cell = |p: usize| (p / grid, p % grid);
    let supports = prediction
        .support
        .iter()
        .filter(|n| n.class_id == prediction.label)
        .take(MAX_SUPPORTS)
        .enumerate()
        .map(|(rank, n)| {
            let boxes = if show_boxes {
                rerank
                    .and_then(|rs| rs.iter().find(|r| r.candidate_id == n.image_id))
                    .map(|r| {
                        r.pairs
                            .iter()
                            .map(|p| BoxPair {
                                query_patch: cell(p.query_patch),
                                support_patch: cell(p.gallery_patch),
                                score: p.value,
                            })
                            .collect()
                    })
                    .unwrap_or_default()
            } else {
                Vec::new()
            };
            SupportImage {
                image_id: n.image_id.clone(),
                rank,
                boxes,
            }
        })
        .collect();
    Ok(ExplanationRecord {
        query_id: query_id.to_string(),
        method: prediction.method,
        label: prediction.label,
        label_name: label_name.to_string(),
        confidence_percent: confidence_percent(prediction.confidence_count, prediction.k),
        grid,
        supports,
        show_boxes,
    })
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Canonical document for `record` (single line, trailing newline).
pub fn serialize_explanation(record: &ExplanationRecord) -> String {
    let mut out = String::new();
    write!(
        out,
        "{{\"confidence_percent\":{},\"grid\":{},\"label\":{},\"label_name\":{},\"method\":{},\"query_id\":{},\"supports\":[",
        record.confidence_percent,
        record.grid,
        record.label,
        json_str(&record.label_name),
        json_str(record.method.as_str()),
        json_str(&record.query_id)
    )
    .unwrap();
    for (i, s) in record.supports.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('{');
        if record.show_boxes {
            out.push_str("\"boxes\":[");
            for (j, b) in s.boxes.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(
                    out,
                    "{{\"q\":[{},{}],\"s\":[{},{}],\"score\":{:.6}}}",
                    b.query_patch.0, b.query_patch.1, b.support_patch.0, b.support_patch.1, b.score
                )
                .unwrap();
            }
            out.push_str("],");
        }
        write!(out, "\"image_id\":{},\"rank\":{}}}", json_str(&s.image_id), s.rank).unwrap();
    }
    out.push_str("]}\n");
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireBox {
    q: (usize, usize),
    s: (usize, usize),
    score: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireSupport {
    boxes: Option<Vec<WireBox>>,
    image_id: String,
    rank: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    confidence_percent: u32,
    grid: usize,
    label: u32,
    label_name: String,
    method: Method,
    query_id: String,
    supports: Vec<WireSupport>,
}

/// Parses an explanation document. Boxes are considered shown when any
/// support carries a `boxes` key.
pub fn parse_explanation(text: &str) -> Result<ExplanationRecord> {
    let w: WireRecord = serde_json::from_str(text)?;
    let show_boxes = w.supports.iter().any(|s| s.boxes.is_some());
    let supports = w
        .supports
        .into_iter()
        .map(|s| {
            let boxes: Vec<BoxPair> = s
                .boxes
                .unwrap_or_default()
                .into_iter()
                .map(|b| BoxPair {
                    query_patch: b.q,
                    support_patch: b.s,
                    score: b.score,
                })
                .collect();
            if let Some(b) = boxes.iter().find(|b| {
                b.query_patch.0 >= w.grid || b.query_patch.1 >= w.grid || b.support_patch.0 >= w.grid || b.support_patch.1 >= w.grid
            }) {
                return Err(Error::InvalidArgument(format!("box {b:?} outside the {} grid", w.grid)));
            }
            Ok(SupportImage {
                image_id: s.image_id,
                rank: s.rank,
                boxes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExplanationRecord {
        query_id: w.query_id,
        method: w.method,
        label: w.label,
        label_name: w.label_name,
        confidence_percent: w.confidence_percent,
        grid: w.grid,
        supports,
        show_boxes,
    })
}
