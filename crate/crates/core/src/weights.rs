//! Cross-correlation importance maps over a patch grid, their binarization,
//! and their normalization into transport marginals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::cosine_similarity_unchecked;

/// Default binarization threshold on CC values.
pub const DEFAULT_CC_THRESHOLD: f64 = 0.55;
/// Floor applied to CC values before they become marginal mass.
pub const MARGINAL_FLOOR: f64 = 1e-6;

/// Per-patch cosine similarity between one image's patches and another
/// image's global embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcMap {
    pub values: Vec<f64>,
    pub source_id: String,
    pub target_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchMask {
    pub selected: Vec<bool>,
    pub threshold: f64,
}

impl PatchMask {
    /// Builds a mask from an explicit selection. At least one patch must be selected.
    pub fn from_selected(selected: Vec<bool>, threshold: f64) -> Result<Self> {
        if !selected.iter().any(|&s| s) {
            return Err(Error::InvalidArgument("patch mask selects no patch".into()));
        }
        Ok(Self { selected, threshold })
    }

    /// Mask selecting every one of `m` patches.
    pub fn full(m: usize) -> Self {
        Self {
            selected: vec![true; m.max(1)],
            threshold: f64::NEG_INFINITY,
        }
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i)
    }
}

/// `values[i] = cos(patch_i, other_global)`. Patch width must equal the global width.
pub fn cross_correlation_map(
    patches: &[f32],
    patch_dim: usize,
    other_global: &[f32],
    source_id: &str,
    target_id: &str,
) -> Result<CcMap> {
    if patch_dim != other_global.len() {
        return Err(Error::DimensionMismatch(format!(
            "patch dim {patch_dim} differs from global dim {}",
            other_global.len()
        )));
    }
    if patch_dim == 0 || !patches.len().is_multiple_of(patch_dim) {
        return Err(Error::DimensionMismatch(format!(
            "{} patch values do not divide into rows of {patch_dim}",
            patches.len()
        )));
    }
    if other_global.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroNorm);
    }
    let values = patches
        .chunks_exact(patch_dim)
        .map(|p| {
            if p.iter().all(|&x| x == 0.0) {
                Err(Error::ZeroNorm)
            } else {
                Ok(cosine_similarity_unchecked(p, other_global))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CcMap {
        values,
        source_id: source_id.to_string(),
        target_id: target_id.to_string(),
    })
}

/// Selects patches with `value >= threshold`; if none qualify, selects the
/// single argmax (lowest index on ties).
pub fn binarize_map(map: &CcMap, threshold: f64) -> PatchMask {
    let mut selected: Vec<bool> = map.values.iter().map(|&v| v >= threshold).collect();
    if !selected.iter().any(|&s| s) && !selected.is_empty() {
        let best = map
            .values
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > map.values[best] { i } else { best });
        selected[best] = true;
    }
    PatchMask { selected, threshold }
}

/// Floors each value at [`MARGINAL_FLOOR`] and normalizes to unit mass.
pub fn weights_to_marginal(map: &CcMap) -> Vec<f64> {
    let floored: Vec<f64> = map.values.iter().map(|&v| v.max(MARGINAL_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|v| v / total).collect()
}

/// Uniform marginal over `m` patches.
pub fn uniform_marginal(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}
