//! Visual diversity of explanation supports: mean pairwise MS-SSIM among the
//! images shown for one query. Lower means more diverse.

use std::collections::BTreeMap;
use std::path::PathBuf;

use image::imageops::FilterType;
use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ssim::{ms_ssim, GrayImage, MsSsimParams};
use crate::error::Result;
use crate::explain::ExplanationRecord;
use crate::knn::Method;

/// Looks up support pixels by image id. `Ok(None)` means the image is unknown.
pub trait PixelSource: Sync {
    fn load(&self, image_id: &str) -> Result<Option<GrayImage>>;
}

/// `0.299 R + 0.587 G + 0.114 B` on the 0..=255 scale.
pub fn luma_from_rgb(img: &RgbImage) -> GrayImage {
    let data = img
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    GrayImage {
        width: img.width() as usize,
        height: img.height() as usize,
        data,
    }
}

/// Reads `<root>/<image_id>.{png,jpg,jpeg}`, optionally resized to a fixed
/// size so supports of different shapes are comparable.
#[derive(Clone, Debug)]
pub struct DirPixelSource {
    pub root: PathBuf,
    pub resize: Option<(u32, u32)>,
}

impl PixelSource for DirPixelSource {
    fn load(&self, image_id: &str) -> Result<Option<GrayImage>> {
        for ext in ["png", "jpg", "jpeg"] {
            let path = self.root.join(format!("{image_id}.{ext}"));
            if path.is_file() {
                let mut rgb = image::open(&path)?.to_rgb8();
                if let Some((w, h)) = self.resize {
                    rgb = image::imageops::resize(&rgb, w, h, FilterType::Triangle);
                }
                return Ok(Some(luma_from_rgb(&rgb)));
            }
        }
        Ok(None)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordDiversity {
    pub mean: f64,
    pub method: Method,
    pub pairs: usize,
    pub query_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub method: Method,
    pub query_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodDiversity {
    pub max: f64,
    pub mean: f64,
    pub method: Method,
    pub min: f64,
    pub records: usize,
    /// Sample standard deviation; 0 for a single record.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub methods: Vec<MethodDiversity>,
    /// Name of the pairwise metric, so externally computed metrics can share the schema.
    pub metric: String,
    pub records: Vec<RecordDiversity>,
    pub skipped: Vec<SkippedRecord>,
}

impl DiversityReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per record: `query_id,method,pairs,mean`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["query_id", "method", "pairs", "mean"])?;
        for r in &self.records {
            w.write_record([
                r.query_id.as_str(),
                r.method.as_str(),
                &r.pairs.to_string(),
                &format!("{:.6}", r.mean),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 input"))
    }
}

fn record_diversity(
    record: &ExplanationRecord,
    images: &dyn PixelSource,
    params: &MsSsimParams,
) -> std::result::Result<RecordDiversity, String> {
    if record.supports.len() < 2 {
        return Err(format!("{} support(s), need at least 2", record.supports.len()));
    }
    let mut pixels = Vec::with_capacity(record.supports.len());
    for s in &record.supports {
        match images.load(&s.image_id) {
            Ok(Some(p)) => pixels.push(p),
            Ok(None) => return Err(format!("no pixels for {}", s.image_id)),
            Err(e) => return Err(format!("{}: {e}", s.image_id)),
        }
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..pixels.len() {
        for j in i + 1..pixels.len() {
            total += ms_ssim(&pixels[i], &pixels[j], params).map_err(|e| e.to_string())?;
            pairs += 1;
        }
    }
    Ok(RecordDiversity {
        mean: total / pairs as f64,
        method: record.method,
        pairs,
        query_id: record.query_id.clone(),
    })
}

/// Mean pairwise MS-SSIM over all `C(n, 2)` support pairs of each record.
/// Records with fewer than two supports or unreadable pixels are skipped
/// with a reason.
pub fn explanation_diversity(
    records: &[ExplanationRecord],
    images: &dyn PixelSource,
    params: &MsSsimParams,
) -> DiversityReport {
    let outcomes: Vec<_> = records
        .par_iter()
        .map(|r| (r, record_diversity(r, images, params)))
        .collect();
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (r, outcome) in outcomes {
        match outcome {
            Ok(d) => kept.push(d),
            Err(reason) => skipped.push(SkippedRecord {
                method: r.method,
                query_id: r.query_id.clone(),
                reason,
            }),
        }
    }
    kept.sort_by(|a, b| a.query_id.cmp(&b.query_id).then(a.method.cmp(&b.method)));
    skipped.sort_by(|a, b| a.query_id.cmp(&b.query_id).then(a.method.cmp(&b.method)));

    let mut by_method: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    for d in &kept {
        by_method.entry(d.method).or_default().push(d.mean);
    }
    let methods = by_method
        .into_iter()
        .map(|(method, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            MethodDiversity {
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean,
                method,
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                records: v.len(),
                std,
            }
        })
        .collect();
    DiversityReport {
        methods,
        metric: "ms_ssim".into(),
        records: kept,
        skipped,
    }
}
