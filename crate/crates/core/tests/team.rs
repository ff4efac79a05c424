mod common;

use common::oracle;
use corrxai_core::knn::Method;
use corrxai_core::team::{
    accept_reject_breakdown, default_thresholds, mann_whitney_u, threshold_sweep, user_accuracy, PValueMethod, Response,
    TrialEntry, TrialLog, DEFAULT_EXCLUSION_THRESHOLD,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_log(rng: &mut ChaCha8Rng, queries: usize) -> TrialLog {
    let entries = (0..queries)
        .map(|i| TrialEntry {
            query_id: format!("q{i:04}"),
            method: Method::EmdCorr,
            ai_confidence: rng.random_range(1..=20) as f64 / 20.0,
            ai_correct: rng.random_bool(0.75),
            responses: (0..rng.random_range(0..3))
                .map(|u| Response {
                    user_id: format!("u{u}"),
                    accepted: rng.random_bool(0.7),
                })
                .collect(),
        })
        .collect();
    TrialLog::new(entries).unwrap()
}

/// Recomputes every threshold with separate counters and picks the best row
/// among those with both sides present, earliest threshold on ties.
fn brute_force_best(log: &TrialLog, thresholds: &[f64]) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &t in thresholds {
        let ai: Vec<&TrialEntry> = log.entries.iter().filter(|e| e.ai_confidence >= t).collect();
        let deferred: Vec<&TrialEntry> = log.entries.iter().filter(|e| e.ai_confidence < t).collect();
        let answers: Vec<bool> = deferred
            .iter()
            .flat_map(|e| e.responses.iter().map(move |r| r.accepted == e.ai_correct))
            .collect();
        if ai.is_empty() || answers.is_empty() {
            continue;
        }
        let ai_acc = 100.0 * ai.iter().filter(|e| e.ai_correct).count() as f64 / ai.len() as f64;
        let human_acc = 100.0 * answers.iter().filter(|&&c| c).count() as f64 / answers.len() as f64;
        let x = ai.len() as f64 / log.entries.len() as f64;
        let team = x * ai_acc + (1.0 - x) * human_acc;
        if best.is_none_or(|(_, b)| team > b + 1e-12) {
            best = Some((t, team));
        }
    }
    best
}

#[test]
fn best_threshold_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let thresholds = default_thresholds();
    for _ in 0..200 {
        let n = rng.random_range(1..120);
        let log = random_log(&mut rng, n);
        let table = threshold_sweep(&log, &thresholds).unwrap();
        for r in &table.rows {
            if let (Some(a), Some(h), Some(t)) = (r.ai_accuracy, r.human_accuracy, r.team_accuracy) {
                assert!((t - (r.ai_fraction * a + (1.0 - r.ai_fraction) * h)).abs() < 1e-9);
            }
        }
        match (table.best_row(), brute_force_best(&log, &thresholds)) {
            (None, None) => {}
            (Some(row), Some((t, team))) => {
                assert_eq!(row.threshold, t);
                assert!((row.team_accuracy.unwrap() - team).abs() < 1e-9);
            }
            (got, want) => panic!("{got:?} vs {want:?}"),
        }
    }
}

#[test]
fn cohort_mean_and_std() {
    const TRIALS: usize = 10_000;
    let (target_mean, target_std) = (78.87, 6.57);
    let raw: Vec<f64> = (0..59).map(|i| ((i as f64) * 1.7).sin() + 0.3 * ((i as f64) * 0.37).cos()).collect();
    let m = raw.iter().sum::<f64>() / raw.len() as f64;
    let s = (raw.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (raw.len() - 1) as f64).sqrt();
    let mut correct: Vec<usize> = raw
        .iter()
        .map(|x| ((target_mean + target_std * (x - m) / s) / 100.0 * TRIALS as f64).round() as usize)
        .collect();
    // near-random users that must not move the aggregate
    correct.push(TRIALS * 55 / 100);
    correct.push(TRIALS / 2);
    let entries = (0..TRIALS)
        .map(|q| TrialEntry {
            query_id: format!("q{q}"),
            method: Method::EmdCorr,
            ai_confidence: 0.5,
            ai_correct: true,
            responses: correct
                .iter()
                .enumerate()
                .map(|(u, &c)| Response {
                    user_id: format!("user{u:02}"),
                    accepted: q < c,
                })
                .collect(),
        })
        .collect();
    let log = TrialLog::new(entries).unwrap();
    let report = user_accuracy(&log, DEFAULT_EXCLUSION_THRESHOLD);
    let emd = &report.methods[0];
    assert_eq!(emd.users, 59);
    assert_eq!(emd.excluded, vec!["user59".to_string(), "user60".to_string()]);
    assert!((emd.mean.unwrap() - target_mean).abs() <= 0.01, "{:?}", emd.mean);
    assert!((emd.std.unwrap() - target_std).abs() <= 0.01, "{:?}", emd.std);

    let again = user_accuracy(&report.retained(&log), DEFAULT_EXCLUSION_THRESHOLD);
    assert!(again.methods[0].excluded.is_empty());
    assert_eq!(again.methods[0].mean, emd.mean);
}

#[test]
fn knn_accept_rate_fixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let n = 10_000;
    let accepted = 8153;
    let entries = (0..n)
        .map(|i| TrialEntry {
            query_id: format!("q{i}"),
            method: Method::Knn,
            ai_confidence: rng.random_range(1..=20) as f64 / 20.0,
            ai_correct: rng.random_bool(0.8),
            responses: vec![Response {
                user_id: format!("u{}", i % 37),
                accepted: i < accepted,
            }],
        })
        .collect();
    let rows = accept_reject_breakdown(&TrialLog::new(entries).unwrap());
    let all = rows.iter().find(|r| r.ai_correct.is_none() && r.difficulty.is_none()).unwrap();
    assert!((all.accept_percent - 81.53).abs() <= 0.01);
    assert!((all.reject_percent - 18.47).abs() <= 0.01);
    for r in &rows {
        assert!((r.accept_percent + r.reject_percent - 100.0).abs() < 1e-9);
    }
    let by_difficulty: usize = rows.iter().filter(|r| r.ai_correct.is_none() && r.difficulty.is_some()).map(|r| r.responses).sum();
    assert_eq!(by_difficulty, n);
}

#[test]
fn large_samples_use_normal_approximation() {
    let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
    let b: Vec<f64> = (0..25).map(|i| i as f64 + 0.5).collect();
    let r = mann_whitney_u(&a, &b).unwrap();
    assert_eq!(r.method, PValueMethod::Normal);
    assert_eq!(r.u + r.u_prime, 750.0);
    // scipy.stats.mannwhitneyu(a, b, method="asymptotic")
    assert_eq!(r.u, 425.0);
    assert!((r.p_value - 0.4027596942538769).abs() < 1e-9, "{}", r.p_value);
}

proptest! {
    #[test]
    fn exact_p_matches_enumeration(
        a in prop::collection::vec(0u8..6, 1..=7),
        b in prop::collection::vec(0u8..6, 1..=7),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        let (u, p) = oracle::mann_whitney_enumerated(&a, &b);
        prop_assert_eq!(r.u, u);
        prop_assert!((r.p_value - p).abs() < 1e-12);
        prop_assert_eq!(r.u + mann_whitney_u(&b, &a).unwrap().u, (a.len() * b.len()) as f64);
    }

    #[test]
    fn log_csv_round_trip(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let log = random_log(&mut rng, n);
        let text = log.to_csv().unwrap();
        let back = TrialLog::parse_csv(&text).unwrap();
        prop_assert_eq!(back.to_csv().unwrap(), text);
        prop_assert_eq!(back.entries.len(), log.entries.len());
    }
}
