mod common;

use common::*;
use nck_core::eval;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn auc_agrees_with_pairwise_count() {
    let mut r = rng(21);
    for _ in 0..300 {
        let n = r.random_range(2..=200);
        let (scores, labels) = random_scored(&mut r, n);
        let got = eval::auc(&scores, &labels).unwrap();
        assert!((got - mann_whitney(&scores, &labels)).abs() < 1e-9);
    }
}

#[test]
fn far_matches_roc_points() {
    let mut r = rng(22);
    for _ in 0..100 {
        let (scores, labels) = random_scored(&mut r, 60);
        let roc = eval::roc_curve(&scores, &labels).unwrap();
        for (t, fpr) in roc.thresholds.iter().zip(&roc.fpr).skip(1) {
            assert_eq!(eval::false_alarm_rate(&scores, &labels, *t).unwrap(), *fpr);
        }
    }
}

proptest! {
    #[test]
    fn roc_is_monotone_and_anchored(seed in any::<u64>(), n in 2usize..150) {
        let (scores, labels) = random_scored(&mut rng(seed), n);
        let roc = eval::roc_curve(&scores, &labels).unwrap();
        prop_assert_eq!((roc.fpr[0], roc.tpr[0]), (0.0, 0.0));
        prop_assert_eq!((*roc.fpr.last().unwrap(), *roc.tpr.last().unwrap()), (1.0, 1.0));
        prop_assert!(roc.thresholds.windows(2).all(|w| w[0] > w[1]));
        prop_assert!(roc.fpr.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(roc.tpr.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(roc.area(), eval::auc(&scores, &labels).unwrap());
    }

    #[test]
    fn auc_ignores_increasing_transforms(seed in any::<u64>(), n in 2usize..100) {
        let (scores, labels) = random_scored(&mut rng(seed), n);
        let base = eval::auc(&scores, &labels).unwrap();
        let cubed: Vec<f64> = scores.iter().map(|s| 3.0 * s * s * s + 1.0).collect();
        let logistic: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-4.0 * s).exp())).collect();
        prop_assert!((eval::auc(&cubed, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((eval::auc(&logistic, &labels).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn negated_scores_complement_auc(seed in any::<u64>(), n in 2usize..100) {
        let mut r = rng(seed);
        let (_, labels) = random_scored(&mut r, n);
        // distinct scores: a shuffled index ramp
        let mut scores: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
        for i in (1..scores.len()).rev() {
            scores.swap(i, r.random_range(0..=i));
        }
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = eval::auc(&scores, &labels).unwrap() + eval::auc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }
}
