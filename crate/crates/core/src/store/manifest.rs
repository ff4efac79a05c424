//! Dataset manifests: one tab-separated line per image.
//!
//! Columns: `image_id  class_id  groundtruth_labels  excluded  split  source_path`
//! where `groundtruth_labels` is comma-joined, `excluded` is `0`/`1`, and
//! `source_path` may be empty. Lines starting with `#` are comments.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GalleryIndex;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub class_id: u32,
    /// Every label accepted as correct for this image (singleton for
    /// single-label datasets).
    pub groundtruth_labels: BTreeSet<u32>,
    pub excluded: bool,
    pub split: Split,
    pub source_path: Option<String>,
}

impl ManifestEntry {
    pub fn is_correct(&self, label: u32) -> bool {
        self.groundtruth_labels.contains(&label)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Non-excluded entries, optionally restricted to one split.
    pub fn active(&self, split: Option<Split>) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(move |e| !e.excluded && split.is_none_or(|s| e.split == s))
    }

    pub fn get(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: n + 1, msg };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 && cols.len() != 6 {
            return Err(err(format!("expected 6 tab-separated fields, found {}", cols.len())));
        }
        let class_id = cols[1]
            .parse()
            .map_err(|e| err(format!("bad class_id {:?}: {e}", cols[1])))?;
        let groundtruth_labels = cols[2]
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.trim().parse::<u32>())
            .collect::<std::result::Result<BTreeSet<_>, _>>()
            .map_err(|e| err(format!("bad groundtruth label: {e}")))?;
        let excluded = match cols[3] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("excluded must be 0 or 1, found {other:?}"))),
        };
        let split = cols[4].parse().map_err(|e: Error| err(e.to_string()))?;
        let source_path = cols.get(5).filter(|s| !s.is_empty()).map(|s| s.to_string());
        entries.push(ManifestEntry {
            image_id: cols[0].to_string(),
            class_id,
            groundtruth_labels,
            excluded,
            split,
            source_path,
        });
    }
    Ok(DatasetManifest { entries })
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

pub fn write_manifest(manifest: &DatasetManifest) -> String {
    let mut out = String::from("# image_id\tclass_id\tgroundtruth_labels\texcluded\tsplit\tsource_path\n");
    for e in &manifest.entries {
        let labels: Vec<String> = e.groundtruth_labels.iter().map(u32::to_string).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.image_id,
            e.class_id,
            labels.join(","),
            u8::from(e.excluded),
            e.split,
            e.source_path.as_deref().unwrap_or("")
        ));
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// (image_id, class_id) pairs whose label (own or groundtruth) has no name in the index.
    pub unknown_classes: Vec<(String, u32)>,
    pub duplicate_ids: Vec<String>,
    /// Non-excluded test entries with an empty groundtruth set.
    pub missing_groundtruth: Vec<String>,
    pub split_counts: BTreeMap<Split, usize>,
    pub excluded_count: usize,
}

impl ValidationReport {
    pub fn issue_count(&self) -> usize {
        self.unknown_classes.len() + self.duplicate_ids.len() + self.missing_groundtruth.len()
    }

    pub fn is_clean(&self) -> bool {
        self.issue_count() == 0
    }
}

/// Cross-checks a manifest against an index. Never fails; findings go in the report.
pub fn validate_manifest(manifest: &DatasetManifest, index: &GalleryIndex) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for e in &manifest.entries {
        let count = seen.entry(&e.image_id).or_default();
        *count += 1;
        if *count == 2 {
            report.duplicate_ids.push(e.image_id.clone());
        }
        let mut labels: BTreeSet<u32> = e.groundtruth_labels.clone();
        labels.insert(e.class_id);
        for c in labels {
            if index.class_name(c).is_none() {
                report.unknown_classes.push((e.image_id.clone(), c));
            }
        }
        if e.excluded {
            report.excluded_count += 1;
        } else if e.split == Split::Test && e.groundtruth_labels.is_empty() {
            report.missing_groundtruth.push(e.image_id.clone());
        }
        *report.split_counts.entry(e.split).or_default() += 1;
    }
    report
}
