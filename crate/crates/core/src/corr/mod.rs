//! Two-stage re-ranking classifiers.
//!
//! Stage 1 shortlists the top-N gallery images by global cosine distance.
//! Stage 2 re-sorts that shortlist by a patch-level score:
//!
//! * EMD-Corr: ascending EMD over the `L` highest-flow pairs of a Sinkhorn plan
//!   between the two 7x7 patch sets.
//! * CHM-Corr: descending sum of the `L` best cosine similarities along a
//!   correspondence map, restricted to query patches whose cross-correlation
//!   clears a threshold.
//! * CHM-Corr+: as CHM-Corr, but the query patches come from annotated keypoints.
//!
//! The final label is the majority vote over the re-ranked top-k.

mod cxcm;
mod keypoints;
mod requests;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cxcm::{read_correspondences, write_correspondences, write_correspondences_to, CXCM_MAGIC, CXCM_VERSION};
pub use keypoints::{keypoint_patches, parse_keypoints, Keypoint, KeypointSet};
pub use requests::{parse_requests, rerank_requests, write_requests, PairRequest};

use crate::error::{Error, Result};
use crate::knn::{cosine_similarity_unchecked, predict_from_ranked, rank_gallery, Method, Prediction, RankedNeighbor};
use crate::ot::{cost_matrix, emd_distance, sinkhorn_flow, top_l_flows, SinkhornParams, DEFAULT_NUM_PAIRS};
use crate::store::{Dims, FeatureRecord, GalleryIndex};
use crate::weights::{binarize_map, cross_correlation_map, uniform_marginal, weights_to_marginal, PatchMask, DEFAULT_CC_THRESHOLD};

/// Shortlist size re-ranked in stage 2.
pub const DEFAULT_SHORTLIST: usize = 50;

/// For each query patch, the grid cell of its match in the gallery image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrespondenceMap {
    pub query_id: String,
    pub gallery_id: String,
    pub grid: usize,
    /// `mapping[i] = (row, col)` for query patch `i`.
    pub mapping: Vec<(u8, u8)>,
}

impl CorrespondenceMap {
    pub fn new(query_id: impl Into<String>, gallery_id: impl Into<String>, grid: usize, mapping: Vec<(u8, u8)>) -> Result<Self> {
        if mapping.len() != grid * grid {
            return Err(Error::DimensionMismatch(format!(
                "correspondence map has {} entries for a {grid}x{grid} grid",
                mapping.len()
            )));
        }
        if let Some(&(r, c)) = mapping.iter().find(|(r, c)| *r as usize >= grid || *c as usize >= grid) {
            return Err(Error::InvalidArgument(format!("cell ({r}, {c}) outside the {grid}x{grid} grid")));
        }
        Ok(Self {
            query_id: query_id.into(),
            gallery_id: gallery_id.into(),
            grid,
            mapping,
        })
    }

    /// Flat gallery patch index matched to query patch `i`.
    pub fn target(&self, i: usize) -> usize {
        let (r, c) = self.mapping[i];
        r as usize * self.grid + c as usize
    }
}

/// One scored patch pair: similarity (CHM) or flow (EMD) plus its cosine distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchPair {
    pub query_patch: usize,
    pub gallery_patch: usize,
    pub value: f64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankResult {
    pub candidate_id: String,
    pub class_id: u32,
    /// `None` when the candidate could not be scored (missing correspondence
    /// map under [`MissingPolicy::RankLast`]).
    pub score: Option<f64>,
    pub pairs: Vec<PatchPair>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Cc,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmdCorrParams {
    pub shortlist: usize,
    pub k: usize,
    pub num_pairs: usize,
    pub sinkhorn: SinkhornParams,
    pub weighting: Weighting,
    pub exclude_self: bool,
}

impl Default for EmdCorrParams {
    fn default() -> Self {
        Self {
            shortlist: DEFAULT_SHORTLIST,
            k: crate::knn::DEFAULT_K,
            num_pairs: DEFAULT_NUM_PAIRS,
            sinkhorn: SinkhornParams::default(),
            weighting: Weighting::Cc,
            exclude_self: false,
        }
    }
}

/// What to do with a shortlisted candidate that has no correspondence map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Error,
    /// Keep the candidate unscored, after every scored one, in kNN order.
    RankLast,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChmCorrParams {
    pub shortlist: usize,
    pub k: usize,
    pub num_pairs: usize,
    pub threshold: f64,
    pub exclude_self: bool,
    pub missing: MissingPolicy,
}

impl Default for ChmCorrParams {
    fn default() -> Self {
        Self {
            shortlist: DEFAULT_SHORTLIST,
            k: crate::knn::DEFAULT_K,
            num_pairs: DEFAULT_NUM_PAIRS,
            threshold: DEFAULT_CC_THRESHOLD,
            exclude_self: false,
            missing: MissingPolicy::Error,
        }
    }
}

/// Supplies correspondence maps for (query, candidate) pairs.
pub trait CorrespondenceSource: Sync {
    /// `Ok(None)` means no map is available for the pair.
    fn lookup(&self, query: &FeatureRecord, candidate: &FeatureRecord, dims: Dims) -> Result<Option<CorrespondenceMap>>;
}

/// Computes maps on the fly by nearest-patch matching.
#[derive(Clone, Copy, Debug, Default)]
pub struct ArgmaxCorrespondence;

impl CorrespondenceSource for ArgmaxCorrespondence {
    fn lookup(&self, query: &FeatureRecord, candidate: &FeatureRecord, dims: Dims) -> Result<Option<CorrespondenceMap>> {
        let mapping = argmax_correspondence(&query.patches, &candidate.patches, dims)?;
        CorrespondenceMap::new(&query.image_id, &candidate.image_id, dims.grid, mapping).map(Some)
    }
}

/// Maps imported from a correspondence file, optionally falling back to
/// [`ArgmaxCorrespondence`] for pairs the file lacks.
#[derive(Clone, Debug, Default)]
pub struct CorrespondenceTable {
    maps: HashMap<(String, String), CorrespondenceMap>,
    fallback: bool,
}

impl CorrespondenceTable {
    pub fn new(maps: impl IntoIterator<Item = CorrespondenceMap>, fallback: bool) -> Self {
        Self {
            maps: maps
                .into_iter()
                .map(|m| ((m.query_id.clone(), m.gallery_id.clone()), m))
                .collect(),
            fallback,
        }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

impl CorrespondenceSource for CorrespondenceTable {
    fn lookup(&self, query: &FeatureRecord, candidate: &FeatureRecord, dims: Dims) -> Result<Option<CorrespondenceMap>> {
        match self.maps.get(&(query.image_id.clone(), candidate.image_id.clone())) {
            Some(m) if m.grid != dims.grid => Err(Error::DimensionMismatch(format!(
                "map ({}, {}) has grid {}, bank has {}",
                m.query_id, m.gallery_id, m.grid, dims.grid
            ))),
            Some(m) => Ok(Some(m.clone())),
            None if self.fallback => ArgmaxCorrespondence.lookup(query, candidate, dims),
            None => Ok(None),
        }
    }
}

/// For each query patch, the gallery cell with the smallest cosine distance
/// (lowest index on ties).
pub fn argmax_correspondence(q_patches: &[f32], g_patches: &[f32], dims: Dims) -> Result<Vec<(u8, u8)>> {
    let cost = cost_matrix(q_patches, g_patches, dims.patch_dim)?;
    if cost.rows != dims.num_patches() || cost.cols != dims.num_patches() {
        return Err(Error::DimensionMismatch(format!(
            "patch sets of {}x{} rows for a {}-cell grid",
            cost.rows,
            cost.cols,
            dims.num_patches()
        )));
    }
    let g = dims.grid;
    Ok((0..cost.rows)
        .map(|i| {
            let best = (0..cost.cols).fold(0, |b, j| if cost.get(i, j) < cost.get(i, b) { j } else { b });
            ((best / g) as u8, (best % g) as u8)
        })
        .collect())
}

/// Sum of the `l` highest similarities `cos(q_i, g_corr(i))` over masked query
/// patches (fewer when the mask selects fewer than `l`).
pub fn chm_score(
    query: &FeatureRecord,
    candidate: &FeatureRecord,
    corr: &CorrespondenceMap,
    mask: &PatchMask,
    l: usize,
    dims: Dims,
) -> Result<RerankResult> {
    if corr.query_id != query.image_id || corr.gallery_id != candidate.image_id {
        return Err(Error::CorrespondenceMismatch(format!(
            "map joins ({}, {}) but scoring ({}, {})",
            corr.query_id, corr.gallery_id, query.image_id, candidate.image_id
        )));
    }
    let m = dims.num_patches();
    if mask.selected.len() != m || corr.mapping.len() != m {
        return Err(Error::CorrespondenceMismatch(format!(
            "mask has {} cells and map {} for a {m}-cell grid",
            mask.selected.len(),
            corr.mapping.len()
        )));
    }
    if l == 0 {
        return Err(Error::InvalidArgument("number of pairs must be at least 1".into()));
    }
    let pd = dims.patch_dim;
    let mut sims: Vec<PatchPair> = mask
        .indices()
        .map(|i| {
            let j = corr.target(i);
            let s = cosine_similarity_unchecked(query.patch(i, pd), candidate.patch(j, pd));
            PatchPair {
                query_patch: i,
                gallery_patch: j,
                value: s,
                cost: 1.0 - s,
            }
        })
        .collect();
    sims.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.query_patch.cmp(&b.query_patch)));
    sims.truncate(l);
    Ok(RerankResult {
        candidate_id: candidate.image_id.clone(),
        class_id: candidate.class_id,
        score: Some(sims.iter().map(|p| p.value).sum()),
        pairs: sims,
    })
}

fn shortlist(query: &FeatureRecord, index: &GalleryIndex, n: usize, k: usize, exclude_self: bool) -> Result<Vec<RankedNeighbor>> {
    let mut ranked = rank_gallery(query, index, exclude_self)?;
    if k == 0 || k > n || n > ranked.len() {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k ({k}) <= N ({n}) <= gallery size ({})",
            ranked.len()
        )));
    }
    ranked.truncate(n);
    Ok(ranked)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Order {
    Ascending,
    Descending,
}

/// Re-sorts shortlist and results together. Ties and unscored candidates keep
/// their stage-1 order.
fn rerank(
    shortlist: Vec<RankedNeighbor>,
    results: Vec<RerankResult>,
    order: Order,
    k: usize,
    method: Method,
) -> Result<(Prediction, Vec<RerankResult>)> {
    let mut idx: Vec<usize> = (0..shortlist.len()).collect();
    idx.sort_by(|&a, &b| match (results[a].score, results[b].score) {
        (Some(x), Some(y)) => {
            let c = if order == Order::Ascending { x.total_cmp(&y) } else { y.total_cmp(&x) };
            c.then(a.cmp(&b))
        }
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.cmp(&b),
    });
    let mut slots: Vec<Option<(RankedNeighbor, RerankResult)>> = shortlist.into_iter().zip(results).map(Some).collect();
    let (ranked, results): (Vec<_>, Vec<_>) = idx
        .into_iter()
        .enumerate()
        .map(|(rank, i)| {
            let (mut n, r) = slots[i].take().expect("each index used once");
            n.rank = rank;
            (n, r)
        })
        .unzip();
    Ok((predict_from_ranked(ranked, k, method)?, results))
}

/// EMD score of one candidate against the query.
pub fn emd_rerank_candidate(
    query: &FeatureRecord,
    candidate: &FeatureRecord,
    dims: Dims,
    params: &EmdCorrParams,
) -> Result<RerankResult> {
    let pd = dims.patch_dim;
    let cost = cost_matrix(&query.patches, &candidate.patches, pd)?;
    let (mu, nu) = match params.weighting {
        Weighting::Uniform => (uniform_marginal(cost.rows), uniform_marginal(cost.cols)),
        Weighting::Cc => (
            weights_to_marginal(&cross_correlation_map(
                &query.patches,
                pd,
                &candidate.global,
                &query.image_id,
                &candidate.image_id,
            )?),
            weights_to_marginal(&cross_correlation_map(
                &candidate.patches,
                pd,
                &query.global,
                &candidate.image_id,
                &query.image_id,
            )?),
        ),
    };
    let flow = sinkhorn_flow(&cost, &mu, &nu, params.sinkhorn)?;
    let pairs = top_l_flows(&flow, &cost, params.num_pairs);
    Ok(RerankResult {
        candidate_id: candidate.image_id.clone(),
        class_id: candidate.class_id,
        score: Some(emd_distance(&pairs)),
        pairs: pairs
            .into_iter()
            .map(|p| PatchPair {
                query_patch: p.i,
                gallery_patch: p.j,
                value: p.flow,
                cost: p.cost,
            })
            .collect(),
    })
}

fn candidates<'a>(index: &'a GalleryIndex, shortlist: &[RankedNeighbor]) -> Vec<&'a FeatureRecord> {
    shortlist
        .iter()
        .map(|n| index.get(&n.image_id).expect("ranked ids come from the index"))
        .collect()
}

/// kNN shortlist re-ranked by ascending top-L EMD.
pub fn emd_corr_classify(
    query: &FeatureRecord,
    index: &GalleryIndex,
    params: &EmdCorrParams,
) -> Result<(Prediction, Vec<RerankResult>)> {
    let short = shortlist(query, index, params.shortlist, params.k, params.exclude_self)?;
    let dims = index.dims();
    let results = candidates(index, &short)
        .into_par_iter()
        .map(|c| emd_rerank_candidate(query, c, dims, params))
        .collect::<Result<Vec<_>>>()?;
    rerank(short, results, Order::Ascending, params.k, Method::EmdCorr)
}

fn chm_rerank<F>(
    query: &FeatureRecord,
    index: &GalleryIndex,
    source: &dyn CorrespondenceSource,
    params: &ChmCorrParams,
    method: Method,
    mask_and_l: F,
) -> Result<(Prediction, Vec<RerankResult>)>
where
    F: Fn(&FeatureRecord) -> Result<(PatchMask, usize)> + Sync,
{
    let short = shortlist(query, index, params.shortlist, params.k, params.exclude_self)?;
    let dims = index.dims();
    let results = candidates(index, &short)
        .into_par_iter()
        .map(|c| match source.lookup(query, c, dims)? {
            Some(corr) => {
                let (mask, l) = mask_and_l(c)?;
                chm_score(query, c, &corr, &mask, l, dims)
            }
            None if params.missing == MissingPolicy::RankLast => Ok(RerankResult {
                candidate_id: c.image_id.clone(),
                class_id: c.class_id,
                score: None,
                pairs: Vec::new(),
            }),
            None => Err(Error::MissingCorrespondence {
                query: query.image_id.clone(),
                gallery: c.image_id.clone(),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    rerank(short, results, Order::Descending, params.k, method)
}

/// kNN shortlist re-ranked by descending CHM similarity sum, query patches
/// chosen by binarized cross-correlation against each candidate.
pub fn chm_corr_classify(
    query: &FeatureRecord,
    index: &GalleryIndex,
    source: &dyn CorrespondenceSource,
    params: &ChmCorrParams,
) -> Result<(Prediction, Vec<RerankResult>)> {
    let pd = index.dims().patch_dim;
    chm_rerank(query, index, source, params, Method::ChmCorr, |c| {
        let cc = cross_correlation_map(&query.patches, pd, &c.global, &query.image_id, &c.image_id)?;
        Ok((binarize_map(&cc, params.threshold), params.num_pairs))
    })
}

/// Like [`chm_corr_classify`] with the query patches fixed to the cells of its
/// visible keypoints; the number of summed pairs equals the number of cells.
pub fn chm_corr_plus_classify(
    query: &FeatureRecord,
    index: &GalleryIndex,
    source: &dyn CorrespondenceSource,
    keypoints: &HashMap<String, KeypointSet>,
    params: &ChmCorrParams,
) -> Result<(Prediction, Vec<RerankResult>)> {
    let dims = index.dims();
    let cells = keypoints
        .get(&query.image_id)
        .map(|k| keypoint_patches(k, dims.grid))
        .unwrap_or_default();
    if cells.is_empty() {
        return Err(Error::NoVisibleKeypoints(query.image_id.clone()));
    }
    let mut selected = vec![false; dims.num_patches()];
    for &c in &cells {
        selected[c] = true;
    }
    let mask = PatchMask::from_selected(selected, f64::NEG_INFINITY)?;
    let l = cells.len();
    chm_rerank(query, index, source, params, Method::ChmCorrPlus, |_| Ok((mask.clone(), l)))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn dims() -> Dims {
        Dims::new(4, 4, 2)
    }

    fn record(id: &str, class_id: u32, patches: [[f32; 4]; 4]) -> FeatureRecord {
        let flat: Vec<f32> = patches.iter().flatten().copied().collect();
        let mut global = vec![0.0; 4];
        for p in &patches {
            for (g, x) in global.iter_mut().zip(p) {
                *g += x / 4.0;
            }
        }
        FeatureRecord::new(id, class_id, global, flat)
    }

    const EYE: [[f32; 4]; 4] = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

    #[test]
    fn argmax_identity_and_reversal() {
        let q = record("q", 0, EYE);
        let map = argmax_correspondence(&q.patches, &q.patches, dims()).unwrap();
        assert_eq!(map, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        let mut rev = EYE;
        rev.reverse();
        let g = record("g", 0, rev);
        let map = argmax_correspondence(&q.patches, &g.patches, dims()).unwrap();
        assert_eq!(map, vec![(1, 1), (1, 0), (0, 1), (0, 0)]);
    }

    #[test]
    fn chm_score_identity_full_mask() {
        let d = Dims::new(4, 4, 3);
        let patches: Vec<f32> = (0..36).map(|k| 1.0 + (k % 7) as f32).collect();
        let q = FeatureRecord::new("q", 0, vec![1.0; 4], patches.clone());
        let g = FeatureRecord::new("g", 0, vec![1.0; 4], patches);
        let identity = (0..9).map(|i| ((i / 3) as u8, (i % 3) as u8)).collect();
        let corr = CorrespondenceMap::new("q", "g", 3, identity).unwrap();
        let r = chm_score(&q, &g, &corr, &PatchMask::full(9), 5, d).unwrap();
        assert!((r.score.unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(r.pairs.len(), 5);
    }

    #[test]
    fn chm_score_fewer_than_l() {
        let q = record("q", 0, EYE);
        let g = record("g", 0, EYE);
        let corr = CorrespondenceMap::new("q", "g", 2, vec![(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap();
        let mask = PatchMask::from_selected(vec![true, false, false, true], 0.55).unwrap();
        let r = chm_score(&q, &g, &corr, &mask, 5, dims()).unwrap();
        assert_eq!(r.pairs.len(), 2);
        assert!((r.score.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn chm_score_id_mismatch() {
        let q = record("q", 0, EYE);
        let g = record("g", 0, EYE);
        let corr = CorrespondenceMap::new("q", "other", 2, vec![(0, 0); 4]).unwrap();
        assert!(matches!(
            chm_score(&q, &g, &corr, &PatchMask::full(4), 5, dims()),
            Err(Error::CorrespondenceMismatch(_))
        ));
    }

    #[test]
    fn map_validation() {
        assert!(CorrespondenceMap::new("q", "g", 2, vec![(0, 0); 3]).is_err());
        assert!(CorrespondenceMap::new("q", "g", 2, vec![(0, 0), (0, 2), (0, 0), (0, 0)]).is_err());
    }

    fn small_index() -> GalleryIndex {
        let mut recs = Vec::new();
        for i in 0..6u32 {
            let mut p = EYE;
            p[(i % 4) as usize][((i + 1) % 4) as usize] = 0.3 + i as f32 * 0.1;
            recs.push(record(&format!("g{i}"), i % 2, p));
        }
        GalleryIndex::with_default_names(dims(), recs, BTreeMap::new()).unwrap()
    }

    #[test]
    fn missing_map_policies() {
        let idx = small_index();
        let q = record("q", 0, EYE);
        let table = CorrespondenceTable::new(Vec::new(), false);
        let strict = ChmCorrParams {
            shortlist: 4,
            k: 3,
            ..ChmCorrParams::default()
        };
        let err = chm_corr_classify(&q, &idx, &table, &strict).unwrap_err();
        assert!(matches!(err, Error::MissingCorrespondence { ref query, .. } if query == "q"));

        // one imported map: that candidate is scored and moves to the front
        let knn = rank_gallery(&q, &idx, false).unwrap();
        let third = knn[2].image_id.clone();
        let map = CorrespondenceMap::new("q", third.clone(), 2, vec![(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap();
        let table = CorrespondenceTable::new(vec![map], false);
        let lenient = ChmCorrParams {
            missing: MissingPolicy::RankLast,
            ..strict
        };
        let (pred, results) = chm_corr_classify(&q, &idx, &table, &lenient).unwrap();
        assert_eq!(results[0].candidate_id, third);
        assert!(results[1..].iter().all(|r| r.score.is_none()));
        let rest: Vec<_> = knn[..4].iter().filter(|n| n.image_id != third).map(|n| n.image_id.clone()).collect();
        assert_eq!(results[1..].iter().map(|r| r.candidate_id.clone()).collect::<Vec<_>>(), rest);
        assert_eq!(pred.support[0].image_id, third);
        assert_eq!(pred.support[0].rank, 0);
    }

    #[test]
    fn plus_requires_keypoints() {
        let idx = small_index();
        let q = record("q", 0, EYE);
        let err = chm_corr_plus_classify(&q, &idx, &ArgmaxCorrespondence, &HashMap::new(), &ChmCorrParams {
            shortlist: 4,
            k: 3,
            ..ChmCorrParams::default()
        })
        .unwrap_err();
        assert!(matches!(err, Error::NoVisibleKeypoints(_)));
    }

    #[test]
    fn shortlist_bounds() {
        let idx = small_index();
        let q = record("q", 0, EYE);
        let p = EmdCorrParams {
            shortlist: 7,
            k: 3,
            ..EmdCorrParams::default()
        };
        assert!(emd_corr_classify(&q, &idx, &p).is_err());
        let p = EmdCorrParams {
            shortlist: 2,
            k: 3,
            ..EmdCorrParams::default()
        };
        assert!(emd_corr_classify(&q, &idx, &p).is_err());
    }
}
