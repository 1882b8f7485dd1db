use nck_core::alternation::{self, AlternationConfig};
use nck_core::synthdata::{self, SyntheticConfig};
use proptest::prelude::*;

fn runs(gt: &[u8]) -> usize {
    gt.iter()
        .enumerate()
        .filter(|&(i, &v)| v == 1 && (i == 0 || gt[i - 1] == 0))
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bags_respect_video_labels(
        seed in any::<u64>(),
        n_videos in 1usize..12,
        frac in 0.0f64..=1.0,
        seg in 0.2f64..=1.0,
        max_segments in 1usize..4,
    ) {
        let cfg = SyntheticConfig {
            n_videos,
            anomaly_video_fraction: frac,
            snippets_per_video: (5, 20),
            anomaly_segment_fraction: seg,
            max_segments,
            feature_dim: 3,
            seed,
            ..SyntheticConfig::default()
        };
        let bags = synthdata::generate(&cfg).unwrap();
        prop_assert_eq!(bags.len(), n_videos);
        for bag in &bags {
            let gt = bag.ground_truth.as_ref().unwrap();
            prop_assert_eq!(gt.len(), bag.n_snippets());
            if bag.label == 0 {
                prop_assert!(gt.iter().all(|&v| v == 0));
            } else {
                let r = runs(gt);
                prop_assert!(r >= 1 && r <= max_segments);
                prop_assert_eq!(gt.iter().filter(|&&v| v == 1).count(), (seg * bag.n_snippets() as f64).floor() as usize);
            }
        }
        if seg < 1.0 {
            for bag in bags.iter().filter(|b| b.is_anomalous()) {
                let gt = bag.ground_truth.as_ref().unwrap();
                if (seg * bag.n_snippets() as f64).floor() < bag.n_snippets() as f64 {
                    prop_assert!(gt.contains(&0));
                }
            }
        }
    }
}

#[test]
fn no_anomalous_videos_means_no_anomalous_snippets() {
    let bags = synthdata::generate(&SyntheticConfig {
        anomaly_video_fraction: 0.0,
        ..SyntheticConfig::default()
    })
    .unwrap();
    assert!(bags
        .iter()
        .all(|b| b.label == 0 && b.ground_truth.as_ref().unwrap().iter().all(|&v| v == 0)));
}

#[test]
fn indistinguishable_classes_give_chance_auc() {
    for seed in 0..5u64 {
        let make = |s: u64, prefix: &str| {
            synthdata::generate(&SyntheticConfig {
                n_videos: 30,
                anomaly_video_fraction: 0.5,
                class_separation: 0.0,
                id_prefix: prefix.into(),
                direction_seed: seed,
                seed: s,
                ..SyntheticConfig::default()
            })
            .unwrap()
        };
        let train = make(seed * 2, "train");
        let eval = make(seed * 2 + 1, "eval");
        let cfg = AlternationConfig {
            n_steps: 1,
            seed,
            ..AlternationConfig::benchmark()
        };
        let auc = alternation::run(&cfg, &train, &eval).unwrap().aucs()[0];
        assert!((0.45..=0.55).contains(&auc), "seed {seed}: {auc}");
    }
}

#[test]
fn standard_benchmark_first_step_lands_in_calibrated_band() {
    let bench = synthdata::standard_benchmark();
    let cfg = AlternationConfig {
        n_steps: 1,
        ..AlternationConfig::benchmark()
    };
    let auc = alternation::run(&cfg, &bench.train, &bench.eval).unwrap().aucs()[0];
    let (lo, hi) = bench.expected.step1_auc;
    assert!(auc >= lo && auc <= hi, "step-1 auc {auc}");
}
