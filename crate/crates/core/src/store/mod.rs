//! Feature records, the immutable gallery index, and the on-disk formats
//! that feed them (feature banks and dataset manifests).

mod bank;
mod manifest;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bank::{load_feature_bank, read_feature_bank, write_feature_bank, write_feature_bank_to, BANK_MAGIC, BANK_VERSION};
pub use manifest::{
    parse_manifest, read_manifest, validate_manifest, write_manifest, DatasetManifest, ManifestEntry, Split,
    ValidationReport,
};

/// Global embedding width of the reference backbone (pooled layer-4).
pub const DEFAULT_GLOBAL_DIM: usize = 2048;
/// Channel width of each patch embedding.
pub const DEFAULT_PATCH_DIM: usize = 2048;
/// Side of the square patch grid.
pub const DEFAULT_GRID: usize = 7;

/// Embedding geometry shared by every record of a bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub global_dim: usize,
    pub patch_dim: usize,
    pub grid: usize,
}

impl Dims {
    pub const fn new(global_dim: usize, patch_dim: usize, grid: usize) -> Self {
        Self { global_dim, patch_dim, grid }
    }

    /// Number of patches per image (`grid * grid`).
    pub const fn num_patches(&self) -> usize {
        self.grid * self.grid
    }

    pub const fn patch_len(&self) -> usize {
        self.num_patches() * self.patch_dim
    }
}

impl Default for Dims {
    fn default() -> Self {
        Self::new(DEFAULT_GLOBAL_DIM, DEFAULT_PATCH_DIM, DEFAULT_GRID)
    }
}

/// One image: identity, label, pooled embedding and its patch grid.
///
/// `patches` is the row-major `grid x grid x patch_dim` tensor flattened, row 0
/// being the top of the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub image_id: String,
    pub class_id: u32,
    pub global: Vec<f32>,
    pub patches: Vec<f32>,
}

impl FeatureRecord {
    pub fn new(image_id: impl Into<String>, class_id: u32, global: Vec<f32>, patches: Vec<f32>) -> Self {
        Self {
            image_id: image_id.into(),
            class_id,
            global,
            patches,
        }
    }

    /// Patch vector `i` (row-major cell index).
    pub fn patch(&self, i: usize, patch_dim: usize) -> &[f32] {
        &self.patches[i * patch_dim..(i + 1) * patch_dim]
    }

    pub fn patch_rows(&self, patch_dim: usize) -> impl ExactSizeIterator<Item = &[f32]> {
        self.patches.chunks_exact(patch_dim)
    }

    /// Checks shape, finiteness, and nonzero norms against `dims`.
    pub fn validate(&self, dims: &Dims) -> Result<()> {
        if self.global.len() != dims.global_dim {
            return Err(Error::DimensionMismatch(format!(
                "record {}: global has {} entries, expected {}",
                self.image_id,
                self.global.len(),
                dims.global_dim
            )));
        }
        if self.patches.len() != dims.patch_len() {
            return Err(Error::DimensionMismatch(format!(
                "record {}: patches have {} entries, expected {}",
                self.image_id,
                self.patches.len(),
                dims.patch_len()
            )));
        }
        check_vector(&self.global).map_err(|detail| Error::InvalidVector {
            image_id: self.image_id.clone(),
            detail: format!("global vector {detail}"),
        })?;
        for (i, patch) in self.patch_rows(dims.patch_dim).enumerate() {
            check_vector(patch).map_err(|detail| Error::InvalidVector {
                image_id: self.image_id.clone(),
                detail: format!("patch {i} {detail}"),
            })?;
        }
        Ok(())
    }
}

fn check_vector(v: &[f32]) -> std::result::Result<(), &'static str> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err("has a non-finite entry");
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err("has zero norm");
    }
    Ok(())
}

/// Immutable gallery of feature records with display names per class.
#[derive(Clone, Debug)]
pub struct GalleryIndex {
    dims: Dims,
    records: Vec<FeatureRecord>,
    class_names: BTreeMap<u32, String>,
    by_id: HashMap<String, usize>,
}

impl GalleryIndex {
    /// Builds an index, validating every record. Every class id used by a
    /// record must have an entry in `class_names`.
    pub fn new(dims: Dims, records: Vec<FeatureRecord>, class_names: BTreeMap<u32, String>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.validate(&dims)?;
            if by_id.insert(r.image_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.image_id.clone()));
            }
            if !class_names.contains_key(&r.class_id) {
                return Err(Error::UnknownClass(r.class_id));
            }
        }
        Ok(Self {
            dims,
            records,
            class_names,
            by_id,
        })
    }

    /// Like [`GalleryIndex::new`], naming any unnamed class `class_<id>`.
    pub fn with_default_names(
        dims: Dims,
        records: Vec<FeatureRecord>,
        mut class_names: BTreeMap<u32, String>,
    ) -> Result<Self> {
        for r in &records {
            class_names
                .entry(r.class_id)
                .or_insert_with(|| format!("class_{}", r.class_id));
        }
        Self::new(dims, records, class_names)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&FeatureRecord> {
        self.by_id.get(image_id).map(|&i| &self.records[i])
    }

    pub fn class_names(&self) -> &BTreeMap<u32, String> {
        &self.class_names
    }

    pub fn class_name(&self, class_id: u32) -> Option<&str> {
        self.class_names.get(&class_id).map(String::as_str)
    }

    /// Returns a copy of this index with the given names merged over the existing ones.
    pub fn renamed(&self, names: &BTreeMap<u32, String>) -> Self {
        let mut class_names = self.class_names.clone();
        for (k, v) in names {
            class_names.insert(*k, v.clone());
        }
        Self {
            class_names,
            ..self.clone()
        }
    }
}

/// Parses a class-name file: one `class_id<TAB>name` per line, `#` comments allowed.
pub fn parse_class_names(text: &str) -> Result<BTreeMap<u32, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, name) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: n + 1,
            msg: "expected class_id<TAB>name".into(),
        })?;
        let id: u32 = id.trim().parse().map_err(|e| Error::Parse {
            line: n + 1,
            msg: format!("bad class id: {e}"),
        })?;
        out.insert(id, name.to_string());
    }
    Ok(out)
}
