//! Shared input loading and classifier construction.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use corrxai_core::corr::{
    parse_keypoints, read_correspondences, ArgmaxCorrespondence, ChmCorrParams, CorrespondenceTable, EmdCorrParams,
    KeypointSet, MissingPolicy, Weighting, DEFAULT_SHORTLIST,
};
use corrxai_core::knn::{KnnParams, DEFAULT_K};
use corrxai_core::ot::{SinkhornParams, DEFAULT_EPSILON, DEFAULT_ITERATIONS, DEFAULT_NUM_PAIRS};
use corrxai_core::store::{load_feature_bank, parse_class_names};
use corrxai_core::weights::DEFAULT_CC_THRESHOLD;
use corrxai_core::{
    ChmCorrClassifier, ChmCorrPlusClassifier, Classifier, EmdCorrClassifier, GalleryIndex, KnnClassifier, Method,
};

pub fn class_names(path: Option<&Path>) -> Result<BTreeMap<u32, String>> {
    match path {
        Some(p) => Ok(parse_class_names(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?),
        None => Ok(BTreeMap::new()),
    }
}

pub fn bank(path: &Path, names: &BTreeMap<u32, String>) -> Result<GalleryIndex> {
    load_feature_bank(path, names).with_context(|| format!("loading feature bank {}", path.display()))
}

#[derive(Args, Debug, Clone)]
pub struct ClassifierArgs {
    #[arg(long, value_parser = parse_method, default_value = "knn")]
    pub method: Method,
    /// Neighbors in the final vote.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Stage-1 candidates re-ranked by the Corr methods.
    #[arg(long, default_value_t = DEFAULT_SHORTLIST)]
    pub shortlist: usize,
    /// Patch pairs contributing to the re-rank score.
    #[arg(long, default_value_t = DEFAULT_NUM_PAIRS)]
    pub pairs: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub iterations: usize,
    /// EMD-Corr marginals: uniform instead of cross-correlation weights.
    #[arg(long)]
    pub uniform: bool,
    /// CHM-Corr cross-correlation threshold.
    #[arg(long, default_value_t = DEFAULT_CC_THRESHOLD)]
    pub threshold: f64,
    /// CXCM file of precomputed correspondences for the CHM methods.
    #[arg(long)]
    pub correspondences: Option<PathBuf>,
    /// Fall back to feature-argmax matching for pairs missing from the CXCM file.
    #[arg(long)]
    pub argmax_fallback: bool,
    /// Rank candidates without a correspondence last instead of failing.
    #[arg(long)]
    pub rank_missing_last: bool,
    /// Keypoint annotations for CHM-Corr+.
    #[arg(long)]
    pub keypoints: Option<PathBuf>,
    /// Skip gallery items sharing the query's id.
    #[arg(long)]
    pub exclude_self: bool,
}

pub fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: corrxai_core::Error| e.to_string())
}

impl ClassifierArgs {
    pub fn build(&self, gallery: &GalleryIndex) -> Result<Box<dyn Classifier>> {
        let chm = ChmCorrParams {
            shortlist: self.shortlist,
            k: self.k,
            num_pairs: self.pairs,
            threshold: self.threshold,
            exclude_self: self.exclude_self,
            missing: if self.rank_missing_last {
                MissingPolicy::RankLast
            } else {
                MissingPolicy::Error
            },
        };
        let table = || -> Result<Option<CorrespondenceTable>> {
            let Some(p) = &self.correspondences else { return Ok(None) };
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            let maps = read_correspondences(&bytes, gallery.dims().grid)?;
            Ok(Some(CorrespondenceTable::new(maps, self.argmax_fallback)))
        };
        Ok(match self.method {
            Method::Knn => Box::new(KnnClassifier(KnnParams {
                k: self.k,
                exclude_self: self.exclude_self,
            })),
            Method::EmdCorr => Box::new(EmdCorrClassifier(EmdCorrParams {
                shortlist: self.shortlist,
                k: self.k,
                num_pairs: self.pairs,
                sinkhorn: SinkhornParams {
                    epsilon: self.epsilon,
                    iterations: self.iterations,
                    ..SinkhornParams::default()
                },
                weighting: if self.uniform { Weighting::Uniform } else { Weighting::Cc },
                exclude_self: self.exclude_self,
            })),
            Method::ChmCorr => match table()? {
                Some(source) => Box::new(ChmCorrClassifier { params: chm, source }),
                None => Box::new(ChmCorrClassifier {
                    params: chm,
                    source: ArgmaxCorrespondence,
                }),
            },
            Method::ChmCorrPlus => {
                let Some(kp) = &self.keypoints else {
                    bail!("chm-corr-plus needs --keypoints");
                };
                let keypoints: HashMap<String, KeypointSet> =
                    parse_keypoints(&fs::read_to_string(kp).with_context(|| format!("reading {}", kp.display()))?)?;
                match table()? {
                    Some(source) => Box::new(ChmCorrPlusClassifier {
                        params: chm,
                        source,
                        keypoints,
                    }),
                    None => Box::new(ChmCorrPlusClassifier {
                        params: chm,
                        source: ArgmaxCorrespondence,
                        keypoints,
                    }),
                }
            }
        })
    }
}

/// Writes to `path`, or stdout when absent.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
