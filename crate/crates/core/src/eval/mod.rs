//! Batch accuracy evaluation and explanation-diversity measurement.

mod diversity;
mod ssim;

pub use diversity::{
    explanation_diversity, luma_from_rgb, DirPixelSource, DiversityReport, MethodDiversity, PixelSource, RecordDiversity,
    SkippedRecord,
};
pub use ssim::{ms_ssim, GrayImage, MsSsimParams, MS_SSIM_WEIGHTS};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::Classifier;
use crate::error::Result;
use crate::knn::Method;
use crate::store::{DatasetManifest, GalleryIndex, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub confidence: f64,
    pub correct: bool,
    pub image_id: String,
    pub predicted: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Percent of evaluated (non-skipped) queries predicted correctly.
    pub accuracy: f64,
    pub correct: usize,
    pub incorrect: usize,
    pub method: Method,
    /// Ids of active manifest entries that had no query features.
    pub missing: Vec<String>,
    pub records: Vec<QueryRecord>,
    pub skipped: usize,
}

impl AccuracyReport {
    pub fn evaluated(&self) -> usize {
        self.correct + self.incorrect
    }

    /// Compact JSON, keys in lexicographic order.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per query: `image_id,predicted,correct,confidence`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image_id", "predicted", "correct", "confidence"])?;
        for r in &self.records {
            w.write_record([
                r.image_id.as_str(),
                &r.predicted.to_string(),
                if r.correct { "1" } else { "0" },
                &format!("{:.6}", r.confidence),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 input"))
    }
}

/// Classifies every active manifest entry (optionally one split) whose
/// features are in `queries`, against `gallery`. Entries without features are
/// skipped and listed. Records are ordered by image id.
pub fn evaluate_topk(
    manifest: &DatasetManifest,
    split: Option<Split>,
    queries: &GalleryIndex,
    gallery: &GalleryIndex,
    classifier: &dyn Classifier,
) -> Result<AccuracyReport> {
    let active: Vec<_> = manifest.active(split).collect();
    let mut missing: Vec<String> = active
        .iter()
        .filter(|e| queries.get(&e.image_id).is_none())
        .map(|e| e.image_id.clone())
        .collect();
    missing.sort();
    let mut records = active
        .par_iter()
        .filter_map(|e| queries.get(&e.image_id).map(|q| (e, q)))
        .map(|(e, q)| {
            let c = classifier.classify(q, gallery)?;
            Ok(QueryRecord {
                confidence: c.prediction.confidence(),
                correct: e.is_correct(c.prediction.label),
                image_id: e.image_id.clone(),
                predicted: c.prediction.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let correct = records.iter().filter(|r| r.correct).count();
    let incorrect = records.len() - correct;
    let accuracy = if records.is_empty() {
        0.0
    } else {
        100.0 * correct as f64 / records.len() as f64
    };
    Ok(AccuracyReport {
        accuracy,
        correct,
        incorrect,
        method: classifier.method(),
        skipped: missing.len(),
        missing,
        records,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet};

    use super::*;
    use crate::classify::{Classification, KnnClassifier};
    use crate::knn::{KnnParams, Prediction, RankedNeighbor};
    use crate::store::{Dims, FeatureRecord, ManifestEntry};

    struct Echo;

    impl Classifier for Echo {
        fn method(&self) -> Method {
            Method::Knn
        }

        fn classify(&self, query: &FeatureRecord, _: &GalleryIndex) -> Result<Classification> {
            Ok(Classification {
                prediction: Prediction {
                    label: query.class_id,
                    confidence_count: 1,
                    k: 1,
                    support: vec![RankedNeighbor {
                        image_id: "g".into(),
                        class_id: query.class_id,
                        distance: 0.0,
                        rank: 0,
                    }],
                    method: Method::Knn,
                },
                rerank: None,
            })
        }
    }

    fn entry(id: &str, class_id: u32, excluded: bool) -> ManifestEntry {
        ManifestEntry {
            image_id: id.into(),
            class_id,
            groundtruth_labels: BTreeSet::from([class_id]),
            excluded,
            split: Split::Validation,
            source_path: None,
        }
    }

    fn setup() -> (DatasetManifest, GalleryIndex, GalleryIndex) {
        let dims = Dims::new(2, 2, 1);
        let rec = |id: &str, c: u32, v: [f32; 2]| FeatureRecord::new(id, c, v.to_vec(), v.to_vec());
        let gallery = GalleryIndex::with_default_names(
            dims,
            vec![rec("g0", 0, [1.0, 0.0]), rec("g1", 1, [0.0, 1.0])],
            BTreeMap::new(),
        )
        .unwrap();
        let queries = GalleryIndex::with_default_names(
            dims,
            vec![
                rec("q3", 1, [1.0, 0.1]),
                rec("q1", 0, [1.0, 0.2]),
                rec("q2", 1, [0.1, 1.0]),
                rec("qx", 1, [0.1, 1.0]),
            ],
            BTreeMap::new(),
        )
        .unwrap();
        let manifest = DatasetManifest {
            entries: vec![
                entry("q3", 1, false),
                entry("q1", 0, false),
                entry("q2", 1, false),
                entry("qx", 1, true),
                entry("q9", 0, false),
            ],
        };
        (manifest, queries, gallery)
    }

    #[test]
    fn echo_is_perfect() {
        let (mut manifest, queries, gallery) = setup();
        manifest.entries.retain(|e| e.image_id != "q9");
        let r = evaluate_topk(&manifest, None, &queries, &gallery, &Echo).unwrap();
        assert_eq!(r.accuracy, 100.0);
        assert_eq!((r.correct, r.incorrect, r.skipped), (3, 0, 0));
    }

    #[test]
    fn knn_counts_and_order() {
        let (manifest, queries, gallery) = setup();
        let knn = KnnClassifier(KnnParams { k: 1, exclude_self: false });
        let r = evaluate_topk(&manifest, None, &queries, &gallery, &knn).unwrap();
        assert_eq!((r.correct, r.incorrect, r.skipped), (2, 1, 1));
        assert_eq!(r.missing, vec!["q9".to_string()]);
        assert_eq!(r.correct + r.incorrect + r.skipped, manifest.active(None).count());
        let ids: Vec<_> = r.records.iter().map(|q| q.image_id.as_str()).collect();
        assert_eq!(ids, vec!["q1", "q2", "q3"]);
        assert!(!r.records[2].correct);
        assert!((r.accuracy - 200.0 / 3.0).abs() < 1e-12);

        let mut shuffled = manifest.clone();
        shuffled.entries.reverse();
        assert_eq!(evaluate_topk(&shuffled, None, &queries, &gallery, &knn).unwrap(), r);

        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().next().unwrap(), "image_id,predicted,correct,confidence");
        assert_eq!(csv.lines().nth(3).unwrap(), "q3,0,0,1.000000");
        let back: AccuracyReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);

        let none = evaluate_topk(&manifest, Some(Split::Test), &queries, &gallery, &knn).unwrap();
        assert_eq!(none.evaluated(), 0);
        assert_eq!(none.accuracy, 0.0);
    }
}
