//! Frozen trial plans for accept/reject studies. A plan fixes, per method,
//! the training, validation, and test trials before any user arrives.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::Classification;
use crate::error::{Error, Result};
use crate::explain::{build_explanation, ExplanationRecord};
use crate::knn::Method;
use crate::store::{GalleryIndex, ManifestEntry};

/// Correct and incorrect predictions sampled per method for the test pool.
pub const DEFAULT_SAMPLES_PER_OUTCOME: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    ImageNet,
    Cub,
}

impl Dataset {
    pub fn training_trials(self) -> usize {
        5
    }

    pub fn validation_trials(self) -> usize {
        match self {
            Dataset::ImageNet => 10,
            Dataset::Cub => 5,
        }
    }

    pub fn test_trials(self) -> usize {
        30
    }

    /// Reference images shown when a class is introduced.
    pub fn intro_images(self) -> usize {
        match self {
            Dataset::ImageNet => 3,
            Dataset::Cub => 6,
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::ImageNet => "imagenet",
            Dataset::Cub => "cub",
        })
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "imagenet" => Ok(Dataset::ImageNet),
            "cub" => Ok(Dataset::Cub),
            other => Err(Error::InvalidArgument(format!("unknown dataset {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub study_id: String,
    pub dataset: Dataset,
    pub methods: Vec<Method>,
    pub samples_per_outcome: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedTrial {
    pub query_id: String,
    pub method: Method,
    pub ai_correct: bool,
    pub ai_confidence: f64,
    pub explanation: ExplanationRecord,
}

/// Turns a classification of a manifest entry into a candidate trial.
pub fn planned_trial(
    entry: &ManifestEntry,
    classification: &Classification,
    gallery: &GalleryIndex,
    hide_boxes: bool,
) -> Result<PlannedTrial> {
    let p = &classification.prediction;
    let label_name = gallery
        .class_name(p.label)
        .map_or_else(|| format!("class_{}", p.label), str::to_string);
    let explanation = build_explanation(
        &entry.image_id,
        p,
        classification.rerank.as_deref(),
        &label_name,
        gallery.dims().grid,
        hide_boxes,
    )?;
    Ok(PlannedTrial {
        query_id: entry.image_id.clone(),
        method: p.method,
        ai_correct: entry.is_correct(p.label),
        ai_confidence: p.confidence(),
        explanation,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodPlan {
    pub training: Vec<PlannedTrial>,
    pub validation: Vec<PlannedTrial>,
    /// Up to `samples_per_outcome` correct plus as many incorrect trials.
    pub test_pool: Vec<PlannedTrial>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassIntro {
    pub label: u32,
    pub label_name: String,
    pub image_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub config: StudyConfig,
    pub methods: BTreeMap<Method, MethodPlan>,
    pub intros: BTreeMap<u32, ClassIntro>,
}

impl StudyPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Samples a plan from candidate trials. Per method the test pool takes
/// `samples_per_outcome` correct and incorrect trials at random; validation
/// then takes the most confident remaining trials and training a random
/// remainder. Fails if a method cannot fill training and validation.
pub fn build_plan(config: StudyConfig, candidates: Vec<PlannedTrial>, gallery: &GalleryIndex) -> Result<StudyPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut by_method: BTreeMap<Method, Vec<PlannedTrial>> = BTreeMap::new();
    for c in candidates {
        by_method.entry(c.method).or_default().push(c);
    }
    let mut methods = BTreeMap::new();
    for &method in &config.methods {
        let mut pool = by_method.remove(&method).unwrap_or_default();
        pool.sort_by(|a, b| a.query_id.cmp(&b.query_id));
        pool.shuffle(&mut rng);
        let (mut test_pool, mut rest) = (Vec::new(), Vec::new());
        let (mut n_ok, mut n_bad) = (0, 0);
        for t in pool {
            let slot = if t.ai_correct { &mut n_ok } else { &mut n_bad };
            if *slot < config.samples_per_outcome {
                *slot += 1;
                test_pool.push(t);
            } else {
                rest.push(t);
            }
        }
        let need = config.dataset.validation_trials() + config.dataset.training_trials();
        if rest.len() < need {
            return Err(Error::InvalidArgument(format!(
                "method {method} has {} trials left after the test pool, needs {need}",
                rest.len()
            )));
        }
        rest.sort_by(|a, b| b.ai_confidence.total_cmp(&a.ai_confidence));
        let validation: Vec<_> = rest.drain(..config.dataset.validation_trials()).collect();
        rest.shuffle(&mut rng);
        let training: Vec<_> = rest.drain(..config.dataset.training_trials()).collect();
        methods.insert(
            method,
            MethodPlan {
                training,
                validation,
                test_pool,
            },
        );
    }

    let labels: BTreeSet<(u32, String)> = methods
        .values()
        .flat_map(|m| m.training.iter().chain(&m.validation).chain(&m.test_pool))
        .map(|t| (t.explanation.label, t.explanation.label_name.clone()))
        .collect();
    let mut intros = BTreeMap::new();
    for (label, label_name) in labels {
        let mut ids: Vec<String> = gallery
            .records()
            .iter()
            .filter(|r| r.class_id == label)
            .map(|r| r.image_id.clone())
            .collect();
        ids.sort();
        ids.shuffle(&mut rng);
        ids.truncate(config.dataset.intro_images());
        intros.insert(
            label,
            ClassIntro {
                label,
                label_name,
                image_ids: ids,
            },
        );
    }
    Ok(StudyPlan { config, methods, intros })
}

/// Method with the fewest users so far; ties go to the earlier method.
pub fn assign_method(methods: &[Method], users_per_method: &BTreeMap<Method, usize>) -> Option<Method> {
    methods
        .iter()
        .copied()
        .min_by_key(|m| (users_per_method.get(m).copied().unwrap_or(0), *m))
}

/// Greedy least-seen selection: `n` pool indices with the lowest exposure
/// counts, ties by index, returned in pool order.
pub fn least_seen(seen: &[usize], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..seen.len()).collect();
    order.sort_by_key(|&i| (seen[i], i));
    order.truncate(n);
    order.sort_unstable();
    order
}
