use otpdag_experiments::data::bars;
use otpdag_experiments::metrics::{hellinger, kl, matched_mae, matched_mae_scalar, top_word_jaccard, topic_metrics};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_topics(rng: &mut ChaCha8Rng, k: usize, v: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| {
            let row: Vec<f64> = (0..v).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

#[test]
fn identical_topics_score_zero() {
    let truth = bars(5);
    let m = topic_metrics(&truth, &truth).unwrap();
    assert!(m.hellinger.abs() < 1e-9 && m.kl.abs() < 1e-9 && m.ws.abs() < 1e-9, "{m:?}");
}

#[test]
fn permuted_truth_scores_zero() {
    let truth = bars(5);
    let mut permuted = truth.clone();
    permuted.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let m = topic_metrics(&permuted, &truth).unwrap();
    assert!(m.hellinger.abs() < 1e-9 && m.kl.abs() < 1e-9 && m.ws.abs() < 1e-9, "{m:?}");
    assert!(top_word_jaccard(&permuted, &truth, 5).unwrap().iter().all(|j| *j == 1.0));
}

/// Squared grid distance between cells of a 2 x 2 grid.
fn cell_distance(a: usize, b: usize) -> f64 {
    let (ra, ca) = ((a / 2) as f64, (a % 2) as f64);
    let (rb, cb) = ((b / 2) as f64, (b % 2) as f64);
    (ra - rb).powi(2) + (ca - cb).powi(2)
}

#[test]
fn two_topics_match_brute_force() {
    let raw_truth = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]];
    let raw_estimate = vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.7, 0.1, 0.1, 0.1]];
    // Rows are smoothed by 1e-10 and renormalised before scoring.
    let smooth = |r: &Vec<f64>| {
        let s: f64 = r.iter().map(|p| p + 1e-10).sum();
        r.iter().map(|p| (p + 1e-10) / s).collect::<Vec<f64>>()
    };
    let truth: Vec<Vec<f64>> = raw_truth.iter().map(smooth).collect();
    let estimate: Vec<Vec<f64>> = raw_estimate.iter().map(smooth).collect();
    let hell = |p: &[f64], q: &[f64]| (0.5 * p.iter().zip(q).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum::<f64>()).sqrt();
    let mut best = None;
    for perm in [[0usize, 1], [1, 0]] {
        let cost: f64 = (0..2).map(|i| hell(&estimate[i], &truth[perm[i]])).sum();
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, perm));
        }
    }
    let (hellinger_sum, perm) = best.unwrap();
    assert_eq!(perm, [1, 0]);
    let mut kl_sum = 0.0;
    let mut ws_sum = 0.0;
    for i in 0..2 {
        let t = &truth[perm[i]];
        let e = &estimate[i];
        let atom = raw_truth[perm[i]].iter().position(|p| *p == 1.0).unwrap();
        kl_sum += t.iter().zip(e).map(|(a, b)| a * (a / b).ln()).sum::<f64>();
        ws_sum += (0..4).map(|b| e[b] * cell_distance(atom, b)).sum::<f64>();
    }
    let m = topic_metrics(&raw_estimate, &raw_truth).unwrap();
    assert!((m.hellinger - hellinger_sum).abs() < 1e-6, "{m:?} vs {hellinger_sum}");
    assert!((m.kl - kl_sum).abs() < 1e-6, "{m:?} vs {kl_sum}");
    assert!((m.ws - ws_sum).abs() < 1e-6, "{m:?} vs {ws_sum}");
}

#[test]
fn metric_errors() {
    let a = vec![vec![0.5, 0.5, 0.0, 0.0]];
    assert!(topic_metrics(&a, &[vec![1.0, 0.0, 0.0]]).is_err());
    assert!(topic_metrics(&[vec![0.5, 0.5, 0.0]], &[vec![1.0, 0.0, 0.0]]).is_err());
    assert!(topic_metrics(&a, &[a[0].clone(), a[0].clone()]).is_err());
}

#[test]
fn hellinger_and_kl_examples() {
    assert!((hellinger(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
    assert_eq!(hellinger(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
    let expected = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
    assert!((kl(&[0.5, 0.5], &[0.25, 0.75]) - expected).abs() < 1e-15);
}

#[test]
fn mae_ignores_label_switching() {
    let truth = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
    let estimate = vec![vec![2.5, 2.0], vec![0.0, -0.5]];
    assert!((matched_mae(&estimate, &truth).unwrap() - 0.25).abs() < 1e-15);
    assert!((matched_mae_scalar(&[35.0, 12.0], &[10.0, 30.0]).unwrap() - 3.5).abs() < 1e-12);
    assert!(matched_mae(&estimate, &truth[..1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn topic_metrics_ignore_row_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_topics(&mut rng, 4, 9);
        let estimate = random_topics(&mut rng, 4, 9);
        let base = topic_metrics(&estimate, &truth).unwrap();
        let mut est_perm = estimate.clone();
        est_perm.shuffle(&mut rng);
        let mut truth_perm = truth.clone();
        truth_perm.shuffle(&mut rng);
        let moved = topic_metrics(&est_perm, &truth_perm).unwrap();
        prop_assert!((base.hellinger - moved.hellinger).abs() < 1e-9);
        prop_assert!((base.kl - moved.kl).abs() < 1e-9);
        prop_assert!((base.ws - moved.ws).abs() < 1e-9);
    }
}
