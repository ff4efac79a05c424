//! Correspondence requests: the (query, candidate) pairs the external
//! matcher must map before CHM-Corr can run. One `query_id<TAB>gallery_id`
//! line per pair; blank lines and `#` comments are ignored.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::rank_gallery;
use crate::store::{FeatureRecord, GalleryIndex};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairRequest {
    pub query_id: String,
    pub gallery_id: String,
}

/// Every (query, shortlisted candidate) pair, grouped by query in input order,
/// candidates in stage-1 rank order.
pub fn rerank_requests(
    queries: &[FeatureRecord],
    index: &GalleryIndex,
    shortlist: usize,
    exclude_self: bool,
) -> Result<Vec<PairRequest>> {
    let per_query = queries
        .par_iter()
        .map(|q| {
            let ranked = rank_gallery(q, index, exclude_self)?;
            Ok(ranked
                .into_iter()
                .take(shortlist)
                .map(|n| PairRequest {
                    query_id: q.image_id.clone(),
                    gallery_id: n.image_id,
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_query.into_iter().flatten().collect())
}

pub fn write_requests(requests: &[PairRequest]) -> String {
    let mut out = String::from("# query_id\tgallery_id\n");
    for r in requests {
        out.push_str(&r.query_id);
        out.push('\t');
        out.push_str(&r.gallery_id);
        out.push('\n');
    }
    out
}

pub fn parse_requests(text: &str) -> Result<Vec<PairRequest>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 || cols.iter().any(|c| c.is_empty()) {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected query_id<TAB>gallery_id, got {line:?}"),
            });
        }
        out.push(PairRequest {
            query_id: cols[0].to_string(),
            gallery_id: cols[1].to_string(),
        });
    }
    Ok(out)
}
