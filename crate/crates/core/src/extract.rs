//! Producer side of the feature-bank and correspondence files: traits an
//! offline extractor implements, and writers that publish its output
//! atomically after checking it against the strict loaders.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corr::{read_correspondences, write_correspondences_to, CorrespondenceMap, PairRequest};
use crate::error::{Error, Result};
use crate::store::{read_feature_bank, write_feature_bank_to, DatasetManifest, Dims, FeatureRecord};

/// Embeds single images.
pub trait FeatureExtractor {
    fn dims(&self) -> Dims;

    /// `(global, patches)` for the image at `path`; `Ok(None)` when the image
    /// cannot be read.
    fn extract(&self, path: &Path) -> Result<Option<(Vec<f32>, Vec<f32>)>>;
}

/// Matches query cells to gallery cells for one requested pair.
pub trait CorrespondenceExporter {
    fn grid(&self) -> usize;

    /// Row-major `(row, col)` per query cell; `Ok(None)` when the pair failed.
    fn correspond(&self, request: &PairRequest) -> Result<Option<Vec<(u8, u8)>>>;
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub written: usize,
    /// Image ids whose pixels could not be read.
    pub skipped: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub written: usize,
    pub failed: Vec<PairRequest>,
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    tmp.set_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Image location for a manifest entry: its `source_path` under `image_root`,
/// or `<image_id>.jpg` when none is recorded.
pub fn image_path(image_root: &Path, image_id: &str, source_path: Option<&str>) -> PathBuf {
    image_root.join(source_path.map_or_else(|| format!("{image_id}.jpg"), str::to_string))
}

/// Extracts every non-excluded manifest entry into a feature bank at `out`.
pub fn extract_bank(
    extractor: &dyn FeatureExtractor,
    manifest: &DatasetManifest,
    image_root: &Path,
    out: &Path,
) -> Result<ExtractionSummary> {
    let dims = extractor.dims();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for e in manifest.active(None) {
        let path = image_path(image_root, &e.image_id, e.source_path.as_deref());
        match extractor.extract(&path)? {
            Some((global, patches)) => {
                let r = FeatureRecord::new(e.image_id.clone(), e.class_id, global, patches);
                r.validate(&dims)?;
                records.push(r);
            }
            None => skipped.push(e.image_id.clone()),
        }
    }
    let mut bytes = Vec::new();
    write_feature_bank_to(&records, dims, &mut bytes)?;
    read_feature_bank(&bytes)?;
    write_atomic(out, &bytes)?;
    Ok(ExtractionSummary {
        written: records.len(),
        skipped,
    })
}

/// Runs every request through `exporter` and writes the successful maps to
/// a correspondence file at `out`.
pub fn export_correspondences(
    exporter: &dyn CorrespondenceExporter,
    requests: &[PairRequest],
    out: &Path,
) -> Result<ExportSummary> {
    let grid = exporter.grid();
    let mut maps = Vec::new();
    let mut failed = Vec::new();
    for r in requests {
        match exporter.correspond(r)? {
            Some(mapping) => maps.push(CorrespondenceMap::new(&r.query_id, &r.gallery_id, grid, mapping)?),
            None => failed.push(r.clone()),
        }
    }
    let mut bytes = Vec::new();
    write_correspondences_to(&maps, grid, &mut bytes)?;
    read_correspondences(&bytes, grid)?;
    write_atomic(out, &bytes)?;
    Ok(ExportSummary {
        written: maps.len(),
        failed,
    })
}
