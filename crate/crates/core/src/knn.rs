//! Stage 1 of every classifier: full-scan cosine ranking of the gallery and a
//! top-k majority vote.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{FeatureRecord, GalleryIndex};

/// Default neighborhood size for the vote.
pub const DEFAULT_K: usize = 20;

/// Cosine similarity accumulated in `f64`. Callers guarantee equal lengths and
/// nonzero norms.
pub(crate) fn cosine_similarity_unchecked(u: &[f32], v: &[f32]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}

fn check_pair(u: &[f32], v: &[f32]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    if u.iter().all(|&x| x == 0.0) || v.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroNorm);
    }
    Ok(())
}

/// Cosine similarity in `[-1, 1]`.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    check_pair(u, v)?;
    Ok(cosine_similarity_unchecked(u, v))
}

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    check_pair(u, v)?;
    Ok(1.0 - cosine_similarity_unchecked(u, v))
}

/// Which classifier produced a prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Knn,
    EmdCorr,
    ChmCorr,
    ChmCorrPlus,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Knn, Method::EmdCorr, Method::ChmCorr, Method::ChmCorrPlus];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Knn => "knn",
            Method::EmdCorr => "emd_corr",
            Method::ChmCorr => "chm_corr",
            Method::ChmCorrPlus => "chm_corr_plus",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "knn" => Ok(Method::Knn),
            "emd_corr" => Ok(Method::EmdCorr),
            "chm_corr" => Ok(Method::ChmCorr),
            "chm_corr_plus" => Ok(Method::ChmCorrPlus),
            _ => Err(Error::InvalidArgument(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedNeighbor {
    pub image_id: String,
    pub class_id: u32,
    /// Global cosine distance to the query.
    pub distance: f64,
    /// Position in the (possibly re-ranked) list, from 0.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u32,
    pub confidence_count: usize,
    pub k: usize,
    pub support: Vec<RankedNeighbor>,
    pub method: Method,
}

impl Prediction {
    /// Fraction of the top-k that voted for `label`.
    pub fn confidence(&self) -> f64 {
        self.confidence_count as f64 / self.k as f64
    }
}

/// Sorts the whole gallery by cosine distance to `query`, ties broken by
/// `image_id`. With `exclude_self`, a gallery record sharing the query's id is
/// dropped.
pub fn rank_gallery(query: &FeatureRecord, index: &GalleryIndex, exclude_self: bool) -> Result<Vec<RankedNeighbor>> {
    let dims = index.dims();
    if query.global.len() != dims.global_dim {
        return Err(Error::DimensionMismatch(format!(
            "query {} has global dim {}, gallery has {}",
            query.image_id,
            query.global.len(),
            dims.global_dim
        )));
    }
    if query.global.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroNorm);
    }
    let mut scored: Vec<(f64, usize)> = index
        .records()
        .par_iter()
        .enumerate()
        .filter(|(_, r)| !(exclude_self && r.image_id == query.image_id))
        .map(|(i, r)| (1.0 - cosine_similarity_unchecked(&query.global, &r.global), i))
        .collect();
    let records = index.records();
    scored.par_sort_unstable_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| records[a.1].image_id.cmp(&records[b.1].image_id))
    });
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(rank, (distance, i))| RankedNeighbor {
            image_id: records[i].image_id.clone(),
            class_id: records[i].class_id,
            distance,
            rank,
        })
        .collect())
}

/// Dominant class among the first `k` entries and its count. A tied vote goes
/// to the class whose best member ranks highest.
pub fn majority_vote(ranked: &[RankedNeighbor], k: usize) -> Result<(u32, usize)> {
    if k == 0 || k > ranked.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} but ranked list has {} entries",
            ranked.len()
        )));
    }
    // class -> (count, position of first member)
    let mut tally: HashMap<u32, (usize, usize)> = HashMap::new();
    for (pos, n) in ranked[..k].iter().enumerate() {
        tally.entry(n.class_id).or_insert((0, pos)).0 += 1;
    }
    let (label, (count, _)) = tally
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .expect("k >= 1");
    Ok((label, count))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
    pub exclude_self: bool,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            exclude_self: false,
        }
    }
}

/// Builds a prediction from an already (re-)ranked list.
pub(crate) fn predict_from_ranked(mut ranked: Vec<RankedNeighbor>, k: usize, method: Method) -> Result<Prediction> {
    let (label, confidence_count) = majority_vote(&ranked, k)?;
    ranked.truncate(k);
    Ok(Prediction {
        label,
        confidence_count,
        k,
        support: ranked,
        method,
    })
}

pub fn knn_classify(query: &FeatureRecord, index: &GalleryIndex, params: KnnParams) -> Result<Prediction> {
    let ranked = rank_gallery(query, index, params.exclude_self)?;
    predict_from_ranked(ranked, params.k, Method::Knn)
}
