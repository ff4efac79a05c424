//! Per-user human accuracy and per-method cohort summaries.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::TrialLog;
use crate::knn::Method;

/// Users scoring at or below this fraction are treated as guessing.
pub const DEFAULT_EXCLUSION_THRESHOLD: f64 = 0.55;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserAccuracy {
    pub method: Method,
    pub user_id: String,
    pub trials: usize,
    pub correct: usize,
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
    pub excluded: bool,
}

/// Cohort summary over retained users, each weighted equally. Percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodAccuracy {
    pub method: Method,
    pub users: usize,
    pub excluded: Vec<String>,
    pub mean: Option<f64>,
    /// Sample standard deviation; `None` with fewer than two users.
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserAccuracyReport {
    pub threshold: f64,
    pub users: Vec<UserAccuracy>,
    pub methods: Vec<MethodAccuracy>,
}

impl UserAccuracyReport {
    /// `log` without the responses of excluded users.
    pub fn retained(&self, log: &TrialLog) -> TrialLog {
        let dropped: BTreeSet<(Method, &str)> = self
            .users
            .iter()
            .filter(|u| u.excluded)
            .map(|u| (u.method, u.user_id.as_str()))
            .collect();
        let mut out = log.clone();
        for e in &mut out.entries {
            e.responses.retain(|r| !dropped.contains(&(e.method, r.user_id.as_str())));
        }
        out
    }

    /// Retained per-user accuracies (percent) for one method, in user order.
    pub fn scores(&self, method: Method) -> Vec<f64> {
        self.users
            .iter()
            .filter(|u| u.method == method && !u.excluded)
            .map(|u| 100.0 * u.accuracy)
            .collect()
    }
}

/// Users are keyed by `(method, user_id)`.
pub fn user_accuracy(log: &TrialLog, exclusion_threshold: f64) -> UserAccuracyReport {
    let mut tally: BTreeMap<(Method, String), (usize, usize)> = BTreeMap::new();
    for e in &log.entries {
        for r in &e.responses {
            let t = tally.entry((e.method, r.user_id.clone())).or_default();
            t.0 += 1;
            t.1 += r.is_correct(e.ai_correct) as usize;
        }
    }
    let users: Vec<UserAccuracy> = tally
        .into_iter()
        .map(|((method, user_id), (trials, correct))| {
            let accuracy = correct as f64 / trials as f64;
            UserAccuracy {
                method,
                user_id,
                trials,
                correct,
                accuracy,
                excluded: accuracy <= exclusion_threshold,
            }
        })
        .collect();
    let mut grouped: BTreeMap<Method, Vec<&UserAccuracy>> = BTreeMap::new();
    for u in &users {
        grouped.entry(u.method).or_default().push(u);
    }
    let methods = grouped
        .into_iter()
        .map(|(method, us)| {
            let kept: Vec<f64> = us.iter().filter(|u| !u.excluded).map(|u| 100.0 * u.accuracy).collect();
            let n = kept.len() as f64;
            let mean = (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / n);
            let std = mean
                .filter(|_| kept.len() > 1)
                .map(|m| (kept.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
            MethodAccuracy {
                method,
                users: kept.len(),
                excluded: us.iter().filter(|u| u.excluded).map(|u| u.user_id.clone()).collect(),
                mean,
                std,
            }
        })
        .collect();
    UserAccuracyReport {
        threshold: exclusion_threshold,
        users,
        methods,
    }
}
