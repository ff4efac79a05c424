//! A common interface over the four classifiers, so batch evaluation and the
//! service can treat them uniformly.

use std::collections::HashMap;

use crate::corr::{
    chm_corr_classify, chm_corr_plus_classify, emd_corr_classify, ChmCorrParams, CorrespondenceSource, EmdCorrParams,
    KeypointSet, RerankResult,
};
use crate::error::Result;
use crate::knn::{knn_classify, KnnParams, Method, Prediction};
use crate::store::{FeatureRecord, GalleryIndex};

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub prediction: Prediction,
    /// Stage-2 evidence, in re-ranked order. `None` for kNN.
    pub rerank: Option<Vec<RerankResult>>,
}

pub trait Classifier: Sync {
    fn method(&self) -> Method;

    fn classify(&self, query: &FeatureRecord, index: &GalleryIndex) -> Result<Classification>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct KnnClassifier(pub KnnParams);

impl Classifier for KnnClassifier {
    fn method(&self) -> Method {
        Method::Knn
    }

    fn classify(&self, query: &FeatureRecord, index: &GalleryIndex) -> Result<Classification> {
        Ok(Classification {
            prediction: knn_classify(query, index, self.0)?,
            rerank: None,
        })
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EmdCorrClassifier(pub EmdCorrParams);

impl Classifier for EmdCorrClassifier {
    fn method(&self) -> Method {
        Method::EmdCorr
    }

    fn classify(&self, query: &FeatureRecord, index: &GalleryIndex) -> Result<Classification> {
        let (prediction, rerank) = emd_corr_classify(query, index, &self.0)?;
        Ok(Classification {
            prediction,
            rerank: Some(rerank),
        })
    }
}

pub struct ChmCorrClassifier<S> {
    pub params: ChmCorrParams,
    pub source: S,
}

impl<S: CorrespondenceSource> Classifier for ChmCorrClassifier<S> {
    fn method(&self) -> Method {
        Method::ChmCorr
    }

    fn classify(&self, query: &FeatureRecord, index: &GalleryIndex) -> Result<Classification> {
        let (prediction, rerank) = chm_corr_classify(query, index, &self.source, &self.params)?;
        Ok(Classification {
            prediction,
            rerank: Some(rerank),
        })
    }
}

pub struct ChmCorrPlusClassifier<S> {
    pub params: ChmCorrParams,
    pub source: S,
    pub keypoints: HashMap<String, KeypointSet>,
}

impl<S: CorrespondenceSource> Classifier for ChmCorrPlusClassifier<S> {
    fn method(&self) -> Method {
        Method::ChmCorrPlus
    }

    fn classify(&self, query: &FeatureRecord, index: &GalleryIndex) -> Result<Classification> {
        let (prediction, rerank) = chm_corr_plus_classify(query, index, &self.source, &self.keypoints, &self.params)?;
        Ok(Classification {
            prediction,
            rerank: Some(rerank),
        })
    }
}
