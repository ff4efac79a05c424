//! Seeded synthetic galleries and study logs.

use std::collections::{BTreeMap, HashMap};

use corrxai_core::corr::{Keypoint, KeypointSet};
use corrxai_core::knn::Method;
use corrxai_core::store::{Dims, FeatureRecord, GalleryIndex};
use corrxai_core::team::{Response, TrialEntry, TrialLog};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    let d = Normal::new(0.0, sigma).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

/// Records drawn around per-class centers. Patches share the class center
/// plus a per-patch perturbation, so patch width equals global width.
pub fn clustered_records(
    rng: &mut ChaCha8Rng,
    dims: Dims,
    classes: usize,
    per_class: usize,
    spread: f64,
    prefix: &str,
) -> Vec<FeatureRecord> {
    assert_eq!(dims.global_dim, dims.patch_dim);
    let centers: Vec<Vec<f64>> = (0..classes).map(|_| gaussian(rng, dims.global_dim, 1.0)).collect();
    let mut out = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for i in 0..per_class {
            out.push(record_near(rng, dims, center, spread, format!("{prefix}{c}_{i:04}"), c as u32));
        }
    }
    out
}

pub fn record_near(rng: &mut ChaCha8Rng, dims: Dims, center: &[f64], spread: f64, id: String, class_id: u32) -> FeatureRecord {
    let noise = gaussian(rng, dims.global_dim, spread);
    let global: Vec<f32> = center.iter().zip(&noise).map(|(a, b)| (a + b) as f32).collect();
    let mut patches = Vec::with_capacity(dims.patch_len());
    for _ in 0..dims.num_patches() {
        let p = gaussian(rng, dims.patch_dim, 1.0);
        patches.extend(global.iter().zip(&p).map(|(g, n)| g + *n as f32));
    }
    FeatureRecord::new(id, class_id, global, patches)
}

pub fn index(dims: Dims, records: Vec<FeatureRecord>) -> GalleryIndex {
    GalleryIndex::with_default_names(dims, records, BTreeMap::new()).unwrap()
}

/// A small random gallery and a query drawn from one of its classes.
pub fn corr_instance(rng: &mut ChaCha8Rng, dims: Dims, classes: usize, per_class: usize) -> (FeatureRecord, Vec<FeatureRecord>) {
    let spread = rng.random_range(0.5..2.0);
    let records = clustered_records(rng, dims, classes, per_class, spread, "g");
    let anchor = &records[rng.random_range(0..records.len())];
    let center: Vec<f64> = anchor.global.iter().map(|&x| x as f64).collect();
    let query = record_near(rng, dims, &center, spread, "query".into(), anchor.class_id);
    (query, records)
}

/// Between one and five visible keypoints at random positions on a 224x224 image.
pub fn random_keypoints(rng: &mut ChaCha8Rng, image_id: &str) -> HashMap<String, KeypointSet> {
    let n = rng.random_range(1..=5);
    let kps = (0..n)
        .map(|i| Keypoint {
            part: format!("part{i}"),
            x: rng.random_range(0.0..224.0),
            y: rng.random_range(0.0..224.0),
            visible: true,
        })
        .collect();
    let set = KeypointSet::new(image_id, 224.0, 224.0, kps).unwrap();
    HashMap::from([(image_id.to_string(), set)])
}

/// Multiplies every global and patch vector by its own positive factor.
pub fn rescale(rng: &mut ChaCha8Rng, rec: &FeatureRecord, patch_dim: usize) -> FeatureRecord {
    let g = rng.random_range(0.1f32..10.0);
    let global = rec.global.iter().map(|x| x * g).collect();
    let mut patches = Vec::with_capacity(rec.patches.len());
    for p in rec.patches.chunks_exact(patch_dim) {
        let s = rng.random_range(0.1f32..10.0);
        patches.extend(p.iter().map(|x| x * s));
    }
    FeatureRecord::new(rec.image_id.clone(), rec.class_id, global, patches)
}

/// One response per query. `ai` queries sit at confidence `hi` and `ai_ok`
/// of them are correct; the rest sit at `lo` with `human_ok` correct answers.
pub fn split_log(ai: usize, ai_ok: usize, human: usize, human_ok: usize, hi: f64, lo: f64) -> TrialLog {
    let mut entries = Vec::with_capacity(ai + human);
    for i in 0..ai {
        entries.push(TrialEntry {
            query_id: format!("a{i}"),
            method: Method::Knn,
            ai_confidence: hi,
            ai_correct: i < ai_ok,
            responses: vec![Response {
                user_id: "u".into(),
                accepted: true,
            }],
        });
    }
    for i in 0..human {
        // accepting a correct prediction is a correct answer
        entries.push(TrialEntry {
            query_id: format!("h{i}"),
            method: Method::Knn,
            ai_confidence: lo,
            ai_correct: true,
            responses: vec![Response {
                user_id: "u".into(),
                accepted: i < human_ok,
            }],
        });
    }
    TrialLog::new(entries).unwrap()
}
