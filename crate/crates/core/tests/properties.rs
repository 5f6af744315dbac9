use std::collections::BTreeSet;

use proptest::prelude::*;

use fer_core::augment::{apply_affine, sample_params, AffineParams, AugmentConfig, AugmentKey};
use fer_core::checkpoint::{Checkpoint, CheckpointMeta};
use fer_core::controller::{history_row, parse_history_csv, EpochRecord, PhaseName, HISTORY_HEADER};
use fer_core::dataset::{
    class_counts_at, parse_fer_csv, stratified_split, write_fer_csv, EmotionLabel, GrayImage,
    Sample, TrainFraction, Usage, NUM_CLASSES,
};
use fer_core::eval::{confusion, normalize_rows, report};
use fer_core::loss::{
    ce_grad_logits, compute_class_weights, smooth_labels, smoothed_target, softmax, weighted_ce,
};
use fer_core::model::{dropout_apply, head_forward, HeadSpec, InputSpec, ParameterGroup, ParameterRole};

fn label_rows(labels: &[(usize, Usage)]) -> Vec<Sample> {
    labels
        .iter()
        .map(|&(l, usage)| Sample {
            image: GrayImage::filled(1, 1, l as u8),
            label: EmotionLabel::ALL[l],
            usage,
        })
        .collect()
}

fn usage() -> impl Strategy<Value = Usage> {
    prop_oneof![
        6 => Just(Usage::Training),
        1 => Just(Usage::PublicTest),
        1 => Just(Usage::PrivateTest),
    ]
}

proptest! {
    #[test]
    fn smoothing_keeps_a_distribution(k in 2usize..12, class in 0usize..12, eps in 0.0f64..1.0) {
        let class = class % k;
        let mut one_hot = vec![0.0; k];
        one_hot[class] = 1.0;
        let s = smooth_labels(&one_hot, eps).unwrap();
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(s.iter().all(|&v| v >= 0.0));
        prop_assert_eq!(smooth_labels(&one_hot, 0.0).unwrap(), one_hot);
    }

    #[test]
    fn gradient_components_sum_to_zero(
        logits in prop::collection::vec(-20.0f64..20.0, 7),
        class in 0usize..7,
        eps in 0.0f64..0.5,
        w in 0.0f64..4.0,
    ) {
        let g = ce_grad_logits(&logits, &smoothed_target(class, 7, eps), w);
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-12 * (1.0 + w));
    }

    #[test]
    fn cross_entropy_is_bounded_below_by_target_entropy(
        logits in prop::collection::vec(-10.0f64..10.0, 7),
        class in 0usize..7,
        eps in 0.0f64..0.5,
        w in 0.01f64..4.0,
    ) {
        let t = smoothed_target(class, 7, eps);
        let p = softmax(&logits);
        let ce = weighted_ce(&p, &t, w).unwrap();
        let entropy: f64 = -t.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
        prop_assert!(ce >= w * entropy - 1e-9);
        let doubled = weighted_ce(&p, &t, 2.0 * w).unwrap();
        prop_assert!((doubled - 2.0 * ce).abs() <= 1e-12 * doubled.abs().max(1.0));
    }

    #[test]
    fn class_weights_are_capped_and_monotone(counts in prop::collection::vec(1usize..5000, 2..8)) {
        let cw = compute_class_weights(&counts, 4.0).unwrap();
        for i in 0..counts.len() {
            prop_assert!(cw.weights[i] <= 4.0);
            prop_assert!(cw.weights[i] > 0.0);
            for j in 0..counts.len() {
                if counts[i] <= counts[j] {
                    prop_assert!(cw.weights[i] >= cw.weights[j]);
                }
            }
        }
    }

    #[test]
    fn softmax_rows_are_valid_and_shift_invariant(
        logits in prop::collection::vec(-50.0f64..50.0, 2..10),
        c in -100.0f64..100.0,
    ) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        let shifted: Vec<f64> = logits.iter().map(|z| z + c).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn head_output_is_a_distribution(
        features in prop::collection::vec(-3.0f64..3.0, 5),
        weights in prop::collection::vec(-1.0f64..1.0, 35),
        bias in prop::collection::vec(-1.0f64..1.0, 7),
        seed in any::<u64>(),
    ) {
        for training in [false, true] {
            let p = head_forward(&features, &weights, &bias, 0.5, [seed, 0, 0], training);
            prop_assert_eq!(p.len(), 7);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-5);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn inference_dropout_is_identity(v in prop::collection::vec(-5.0f64..5.0, 1..50), seed in any::<u64>()) {
        prop_assert_eq!(dropout_apply(&v, 0.5, [seed, 1, 2], false), v.clone());
        prop_assert_eq!(dropout_apply(&v, 0.0, [seed, 1, 2], true), v);
    }

    #[test]
    fn split_is_stratified_and_preserves_rows(
        rows in prop::collection::vec((0usize..NUM_CLASSES, usage()), 0..300),
        seed in any::<u64>(),
    ) {
        let samples = label_rows(&rows);
        let training: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].usage == Usage::Training).collect();
        let counts = class_counts_at(&samples, &training);
        match stratified_split(&samples, TrainFraction::DEFAULT, seed) {
            Ok(split) => {
                let train: BTreeSet<_> = split.train_indices.iter().copied().collect();
                let val: BTreeSet<_> = split.val_indices.iter().copied().collect();
                prop_assert!(train.is_disjoint(&val));
                let union: Vec<usize> = train.union(&val).copied().collect();
                prop_assert_eq!(union, training.clone());
                let tc = class_counts_at(&samples, &split.train_indices);
                for c in 0..NUM_CLASSES {
                    let n = counts.0[c];
                    prop_assert_eq!(tc.0[c], n * 7 / 8);
                    if n > 0 {
                        let share = tc.0[c] as f64 / n as f64;
                        prop_assert!((share - 0.875).abs() <= 1.0 / n as f64);
                    }
                }
                let again = stratified_split(&samples, TrainFraction::DEFAULT, seed).unwrap();
                prop_assert_eq!(again, split);
            }
            Err(_) => prop_assert!(counts.0.contains(&1)),
        }
    }

    #[test]
    fn csv_round_trip(rows in prop::collection::vec((0usize..NUM_CLASSES, usage(), any::<u8>()), 0..20)) {
        let samples: Vec<Sample> = rows
            .iter()
            .map(|&(l, usage, v)| Sample {
                image: GrayImage::filled(48, 48, v),
                label: EmotionLabel::ALL[l],
                usage,
            })
            .collect();
        let text = write_fer_csv(&samples);
        prop_assert_eq!(parse_fer_csv(text.as_bytes()).unwrap(), samples);
    }

    #[test]
    fn report_metric_identities(pairs in prop::collection::vec((0usize..7, 0usize..7), 1..400)) {
        let (preds, truths): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let m = confusion(&preds, &truths, 7).unwrap();
        prop_assert_eq!(m.total(), pairs.len() as u64);
        let r = report(&m).unwrap();
        let recall_weighted: f64 = r
            .per_class
            .iter()
            .map(|c| c.recall * c.support as f64)
            .sum::<f64>()
            / m.total() as f64;
        prop_assert!((r.accuracy - recall_weighted).abs() < 1e-12);
        let max_f1 = r.per_class.iter().map(|c| c.f1).fold(0.0, f64::max);
        prop_assert!(r.macro_avg.f1 <= max_f1 + 1e-12);
        let norm = normalize_rows(&m);
        for (c, row) in norm.iter().enumerate() {
            prop_assert_eq!(row[c], r.per_class[c].recall);
            if m.row_sum(c) > 0 {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn report_is_permutation_invariant(
        (pairs, shuffled) in prop::collection::vec((0usize..7, 0usize..7), 1..200)
            .prop_flat_map(|p| (Just(p.clone()), Just(p).prop_shuffle())),
    ) {
        let report_of = |p: &[(usize, usize)]| {
            let (preds, truths): (Vec<usize>, Vec<usize>) = p.iter().copied().unzip();
            report(&confusion(&preds, &truths, 7).unwrap()).unwrap()
        };
        prop_assert_eq!(report_of(&pairs), report_of(&shuffled));
    }

    #[test]
    fn augmentation_is_keyed_and_bounded(seed in any::<u64>(), epoch in 0u64..100, index in 0u64..100_000) {
        let cfg = AugmentConfig::default();
        let key = AugmentKey { seed, epoch, index };
        let p = sample_params(&cfg, key);
        prop_assert_eq!(p, sample_params(&cfg, key));
        prop_assert!(p.angle.abs() <= 25.0);
        prop_assert!(p.tx.abs() <= 0.15 * 48.0 && p.ty.abs() <= 0.15 * 48.0);
        prop_assert!((p.zoom - 1.0).abs() <= 0.25);
        prop_assert!(p.shear.abs() <= 0.1);
    }

    #[test]
    fn warped_pixels_come_from_the_source(
        pixels in prop::collection::vec(any::<u8>(), 64),
        angle in -25.0f64..25.0,
        tx in -3.0f64..3.0,
        zoom in 0.75f64..1.25,
        flip in any::<bool>(),
    ) {
        let img = GrayImage::new(8, 8, pixels.clone()).unwrap();
        let params = AffineParams { angle, tx, ty: -tx, zoom, shear: 0.05, flip };
        let out = apply_affine(&img, &params).unwrap();
        let source: BTreeSet<u8> = pixels.into_iter().collect();
        prop_assert!(out.pixels().iter().all(|v| source.contains(v)));
    }

    #[test]
    fn checkpoint_round_trip(values in prop::collection::vec(-1000.0f32..1000.0, 1..40), epoch in 1usize..100) {
        let n = values.len();
        let mut g = ParameterGroup::zeros("head.kernel", ParameterRole::Head, vec![n], true);
        g.values = values.iter().map(|&v| v as f64).collect();
        let ckpt = Checkpoint {
            meta: CheckpointMeta {
                backend: "reference".into(),
                config_digest: "abc".into(),
                epoch,
                phase: "warmup".into(),
                val_loss: 0.5,
                val_acc: 0.75,
                head: HeadSpec::new(n, 0.5, 7).unwrap(),
                input: InputSpec::Flat { downsample: 2 },
                epsilon: 0.06,
            },
            groups: vec![
                ParameterGroup::zeros("backbone", ParameterRole::Backbone, vec![0], true),
                g,
            ],
        };
        let bytes = ckpt.to_bytes().unwrap();
        prop_assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ckpt);
        prop_assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn history_csv_round_trip(rows in prop::collection::vec((1e-8f64..1.0, 0.0f64..5.0, 0.0f64..1.0), 1..15)) {
        let records: Vec<EpochRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, &(lr, loss, acc))| EpochRecord {
                epoch: i + 1,
                phase: if i < 3 { PhaseName::Warmup } else { PhaseName::Finetune },
                lr,
                train_loss: loss,
                train_acc: acc,
                val_loss: loss * 1.1,
                val_acc: acc * 0.9,
            })
            .collect();
        let mut text = format!("{HISTORY_HEADER}\n");
        for r in &records {
            text.push_str(&history_row(r));
            text.push('\n');
        }
        prop_assert_eq!(parse_history_csv(&text).unwrap(), records);
    }

    #[test]
    fn train_fraction_round_trip(num in 1u64..50, extra in 1u64..50) {
        let f = TrainFraction::new(num, num + extra).unwrap();
        let parsed: TrainFraction = f.to_string().parse().unwrap();
        prop_assert_eq!(parsed.as_f64(), f.as_f64());
        let n = 1000usize;
        prop_assert!(f.floor_of(n) as f64 <= f.as_f64() * n as f64);
    }
}
