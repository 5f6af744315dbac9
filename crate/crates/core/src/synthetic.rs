//! Synthetic datasets in the FER-2013 row format.
//!
//! [`separable`] draws faces whose class is carried by a coarse, flip- and
//! rotation-tolerant intensity layout, so a linear model on pixels separates
//! them even after augmentation. [`with_official_counts`] reproduces the
//! published per-partition class counts of FER-2013 with filler pixels, for
//! exercising split and weighting logic at full scale when the real file is
//! not available.

use rand::Rng;

use crate::dataset::{EmotionLabel, GrayImage, Sample, Usage, IMAGE_SIDE, NUM_CLASSES};
use crate::rng::keyed_rng;

/// Published FER-2013 class counts per partition, in label-index order.
pub const FER2013_TRAINING_COUNTS: [usize; NUM_CLASSES] = [3995, 436, 4097, 7215, 4830, 3171, 4965];
pub const FER2013_PUBLIC_TEST_COUNTS: [usize; NUM_CLASSES] = [467, 56, 496, 895, 653, 415, 607];
pub const FER2013_PRIVATE_TEST_COUNTS: [usize; NUM_CLASSES] = [491, 55, 528, 879, 594, 416, 626];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    /// Number of classes used, taken from the start of the label order (1..=7).
    pub classes: usize,
    pub training: usize,
    pub public_test: usize,
    pub private_test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            training: 300,
            public_test: 60,
            private_test: 60,
            seed: 42,
        }
    }
}

fn pattern_value(class: usize, x: usize, y: usize) -> f64 {
    let c = (IMAGE_SIDE as f64 - 1.0) / 2.0;
    let (dx, dy) = (x as f64 - c, y as f64 - c);
    let r = (dx * dx + dy * dy).sqrt();
    let high = 210.0;
    let low = 40.0;
    match class % 7 {
        // bright centre disc
        0 => if r < 13.0 { high } else { low },
        // dark centre disc on bright ground
        1 => if r < 13.0 { low } else { high },
        // bright upper half
        2 => if y < IMAGE_SIDE / 2 { high } else { low },
        // bright lower half
        3 => if y >= IMAGE_SIDE / 2 { high } else { low },
        // bright ring
        4 => if (10.0..18.0).contains(&r) { high } else { low },
        // bright horizontal band
        5 => if (18..30).contains(&y) { high } else { low },
        // bright vertical band
        _ => if (18..30).contains(&x) { high } else { low },
    }
}

fn draw(class: usize, seed: u64, index: u64) -> GrayImage {
    let mut rng = keyed_rng("synthetic-face", &[seed, index]);
    let gain: f64 = rng.random_range(0.85..1.15);
    let mut img = GrayImage::filled(IMAGE_SIDE, IMAGE_SIDE, 0);
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let noise: f64 = rng.random_range(-30.0..30.0);
            let v = pattern_value(class, x, y) * gain + noise;
            img.set(x, y, v.round().clamp(0.0, 255.0) as u8);
        }
    }
    img
}

/// Linearly separable samples; labels cycle through the first `classes` labels.
pub fn separable(spec: &SyntheticSpec) -> Vec<Sample> {
    assert!((1..=NUM_CLASSES).contains(&spec.classes), "classes must lie in 1..=7");
    let parts = [
        (Usage::Training, spec.training),
        (Usage::PublicTest, spec.public_test),
        (Usage::PrivateTest, spec.private_test),
    ];
    let mut out = Vec::with_capacity(spec.training + spec.public_test + spec.private_test);
    for (usage, n) in parts {
        for i in 0..n {
            let class = i % spec.classes;
            let index = out.len() as u64;
            out.push(Sample {
                image: draw(class, spec.seed, index),
                label: EmotionLabel::ALL[class],
                usage,
            });
        }
    }
    out
}

/// 35,887 rows with the published per-partition class counts. Pixels are
/// low-valued filler; rows of each partition are interleaved across classes.
pub fn with_official_counts(seed: u64) -> Vec<Sample> {
    let parts = [
        (Usage::Training, FER2013_TRAINING_COUNTS),
        (Usage::PublicTest, FER2013_PUBLIC_TEST_COUNTS),
        (Usage::PrivateTest, FER2013_PRIVATE_TEST_COUNTS),
    ];
    let mut out = Vec::new();
    for (usage, counts) in parts {
        let mut remaining = counts;
        let mut rng = keyed_rng("official-counts", &[seed, usage as u64]);
        let mut left: usize = remaining.iter().sum();
        while left > 0 {
            // pick a class proportionally to what is left
            let mut pick = rng.random_range(0..left);
            let class = remaining
                .iter()
                .position(|&c| {
                    if pick < c {
                        true
                    } else {
                        pick -= c;
                        false
                    }
                })
                .expect("pick < left");
            remaining[class] -= 1;
            left -= 1;
            let pixels: Vec<u8> = (0..IMAGE_SIDE * IMAGE_SIDE).map(|_| rng.random_range(0..10)).collect();
            out.push(Sample {
                image: GrayImage::new(IMAGE_SIDE, IMAGE_SIDE, pixels).expect("48x48"),
                label: EmotionLabel::ALL[class],
                usage,
            });
        }
    }
    out
}
