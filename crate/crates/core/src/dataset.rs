//! FER-2013 ingestion, class statistics and the train/validation split.
//!
//! The distribution format is a CSV with header `emotion,pixels,Usage`, one
//! 48x48 grayscale face per row. Rows tagged `Training` are split into a
//! training and a validation share per class; `PublicTest` and `PrivateTest`
//! rows are kept exactly as distributed.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{keyed_rng, sha256_hex};

pub const NUM_CLASSES: usize = 7;
pub const IMAGE_SIDE: usize = 48;
pub const PIXELS_PER_IMAGE: usize = IMAGE_SIDE * IMAGE_SIDE;

pub const CSV_HEADER: &str = "emotion,pixels,Usage";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unexpected header {found:?}, expected {CSV_HEADER:?}")]
    Header { found: String },
    #[error("line {line}: expected 3 fields (emotion,pixels,Usage), found {found}")]
    FieldCount { line: u64, found: usize },
    #[error("line {line}: malformed row, expected {PIXELS_PER_IMAGE} pixel values, found {found}")]
    MalformedRow { line: u64, found: usize },
    #[error("line {line}: pixel value {value:?} is not an integer in 0..=255")]
    InvalidPixel { line: u64, value: String },
    #[error("line {line}: emotion label {value:?} is outside 0..=6")]
    LabelRange { line: u64, value: String },
    #[error("line {line}: unknown usage partition {value:?}")]
    Partition { line: u64, value: String },
    #[error("class {label} has {count} training sample(s); at least 2 are required to split")]
    UnsplittableClass { label: EmotionLabel, count: usize },
    #[error("invalid train fraction {0:?}: must be a rational strictly between 0 and 1")]
    InvalidFraction(String),
    #[error("manifest does not match dataset: {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// The seven emotion categories, indexed as in the FER-2013 CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Angry = 0,
    Disgust = 1,
    Fear = 2,
    Happy = 3,
    Sad = 4,
    Surprise = 5,
    Neutral = 6,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; NUM_CLASSES] = [
        EmotionLabel::Angry,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Happy,
        EmotionLabel::Sad,
        EmotionLabel::Surprise,
        EmotionLabel::Neutral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Angry => "angry",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Neutral => "neutral",
        }
    }

    /// Capitalised name used in rendered tables.
    pub fn title(self) -> &'static str {
        match self {
            EmotionLabel::Angry => "Angry",
            EmotionLabel::Disgust => "Disgust",
            EmotionLabel::Fear => "Fear",
            EmotionLabel::Happy => "Happy",
            EmotionLabel::Sad => "Sad",
            EmotionLabel::Surprise => "Surprise",
            EmotionLabel::Neutral => "Neutral",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown emotion {s:?}"))
    }
}

/// Official partition a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Usage {
    Training,
    PublicTest,
    PrivateTest,
}

impl Usage {
    pub fn as_str(self) -> &'static str {
        match self {
            Usage::Training => "Training",
            Usage::PublicTest => "PublicTest",
            Usage::PrivateTest => "PrivateTest",
        }
    }
}

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Usage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Training" => Ok(Usage::Training),
            "PublicTest" => Ok(Usage::PublicTest),
            "PrivateTest" => Ok(Usage::PrivateTest),
            _ => Err(format!("unknown usage {s:?}")),
        }
    }
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    /// Returns `None` when `pixels.len() != width * height` or a side is zero.
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Option<Self> {
        (width > 0 && height > 0 && pixels.len() == width * height).then_some(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }
}

/// One labelled face.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub image: GrayImage,
    pub label: EmotionLabel,
    pub usage: Usage,
}

impl Sample {
    /// Serialise back into the distribution row format (without line terminator).
    pub fn to_csv_row(&self) -> String {
        let mut row = String::with_capacity(PIXELS_PER_IMAGE * 4 + 16);
        row.push_str(&self.label.index().to_string());
        row.push(',');
        for (i, p) in self.image.pixels().iter().enumerate() {
            if i > 0 {
                row.push(' ');
            }
            row.push_str(&p.to_string());
        }
        row.push(',');
        row.push_str(self.usage.as_str());
        row
    }
}

/// Parse a FER-2013 CSV stream. Rows are returned in file order.
pub fn parse_fer_csv<R: Read>(reader: R) -> Result<Vec<Sample>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let header = rdr.headers()?;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != ["emotion", "pixels", "Usage"] {
        return Err(DatasetError::Header {
            found: found.join(","),
        });
    }

    let mut samples = Vec::new();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(DatasetError::FieldCount {
                line,
                found: record.len(),
            });
        }
        let emotion = record[0].trim();
        let label = emotion
            .parse::<usize>()
            .ok()
            .and_then(EmotionLabel::from_index)
            .ok_or_else(|| DatasetError::LabelRange {
                line,
                value: emotion.to_string(),
            })?;

        let fields: Vec<&str> = record[1].split_ascii_whitespace().collect();
        if fields.len() != PIXELS_PER_IMAGE {
            return Err(DatasetError::MalformedRow {
                line,
                found: fields.len(),
            });
        }
        let mut pixels = Vec::with_capacity(PIXELS_PER_IMAGE);
        for f in fields {
            let v = f.parse::<u8>().map_err(|_| DatasetError::InvalidPixel {
                line,
                value: f.to_string(),
            })?;
            pixels.push(v);
        }

        let usage_field = record[2].trim();
        let usage = usage_field
            .parse::<Usage>()
            .map_err(|_| DatasetError::Partition {
                line,
                value: usage_field.to_string(),
            })?;

        samples.push(Sample {
            image: GrayImage::new(IMAGE_SIDE, IMAGE_SIDE, pixels).expect("pixel count checked"),
            label,
            usage,
        });
    }
    Ok(samples)
}

/// Serialise samples in the distribution format, header included.
pub fn write_fer_csv<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in samples {
        out.push_str(&s.to_csv_row());
        out.push('\n');
    }
    out
}

/// Per-class sample counts, indexed by [`EmotionLabel::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(pub [usize; NUM_CLASSES]);

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn get(&self, label: EmotionLabel) -> usize {
        self.0[label.index()]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

pub fn class_counts<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> ClassCounts {
    let mut counts = [0usize; NUM_CLASSES];
    for s in samples {
        counts[s.label.index()] += 1;
    }
    ClassCounts(counts)
}

/// Counts over the rows of `samples` selected by `indices`.
pub fn class_counts_at(samples: &[Sample], indices: &[usize]) -> ClassCounts {
    class_counts(indices.iter().map(|&i| &samples[i]))
}

/// Exact rational fraction in (0, 1), e.g. `7/8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainFraction {
    numerator: u64,
    denominator: u64,
}

impl TrainFraction {
    pub const DEFAULT: TrainFraction = TrainFraction {
        numerator: 7,
        denominator: 8,
    };

    pub fn new(numerator: u64, denominator: u64) -> Result<Self, DatasetError> {
        if denominator == 0 || numerator == 0 || numerator >= denominator {
            return Err(DatasetError::InvalidFraction(format!(
                "{numerator}/{denominator}"
            )));
        }
        let g = gcd(numerator, denominator);
        Ok(Self {
            numerator: numerator / g,
            denominator: denominator / g,
        })
    }

    /// `floor(fraction * n)` without rounding error.
    pub fn floor_of(&self, n: usize) -> usize {
        ((n as u128 * self.numerator as u128) / self.denominator as u128) as usize
    }

    pub fn as_f64(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Default for TrainFraction {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for TrainFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

impl FromStr for TrainFraction {
    type Err = DatasetError;

    /// Accepts `a/b` or a finite decimal such as `0.875`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::InvalidFraction(s.to_string());
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse::<u64>().map_err(|_| bad())?;
            let d = d.trim().parse::<u64>().map_err(|_| bad())?;
            return Self::new(n, d).map_err(|_| bad());
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.chars().any(|c| c != '0') || frac.len() > 18 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        if frac.is_empty() {
            return Err(bad());
        }
        let numerator = frac.parse::<u64>().map_err(|_| bad())?;
        let denominator = 10u64.pow(frac.len() as u32);
        Self::new(numerator, denominator).map_err(|_| bad())
    }
}

impl Serialize for TrainFraction {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TrainFraction {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Training/validation assignment of the `Training` rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Per-class seeded split of the `Training` rows of `samples`.
///
/// Indices refer to positions in `samples`. For a class with `n` rows,
/// `floor(fraction * n)` go to training and the rest to validation. Classes
/// absent from the partition are skipped. Within a class, rows are shuffled
/// with a Fisher-Yates pass keyed by `(seed, class index)`.
pub fn stratified_split(
    samples: &[Sample],
    fraction: TrainFraction,
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, s) in samples.iter().enumerate() {
        if s.usage == Usage::Training {
            per_class[s.label.index()].push(i);
        }
    }

    let mut train_indices = Vec::new();
    let mut val_indices = Vec::new();
    for (class, mut rows) in per_class.into_iter().enumerate() {
        let n = rows.len();
        if n == 0 {
            continue;
        }
        if n < 2 {
            return Err(DatasetError::UnsplittableClass {
                label: EmotionLabel::ALL[class],
                count: n,
            });
        }
        let mut rng = keyed_rng("stratified-split", &[seed, class as u64]);
        rows.shuffle(&mut rng);
        let n_train = fraction.floor_of(n);
        train_indices.extend_from_slice(&rows[..n_train]);
        val_indices.extend_from_slice(&rows[n_train..]);
    }
    train_indices.sort_unstable();
    val_indices.sort_unstable();
    Ok(SplitAssignment {
        train_indices,
        val_indices,
    })
}

/// Deterministic record of which rows are used for training, validation and test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train_fraction: TrainFraction,
    pub test_partition: Usage,
    /// Number of data rows in the CSV the manifest was built from.
    pub dataset_rows: usize,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub digest: String,
}

impl SplitManifest {
    pub fn build(
        samples: &[Sample],
        fraction: TrainFraction,
        seed: u64,
        test_partition: Usage,
    ) -> Result<Self, DatasetError> {
        if test_partition == Usage::Training {
            return Err(DatasetError::ManifestMismatch(
                "the test partition must be PublicTest or PrivateTest".into(),
            ));
        }
        let split = stratified_split(samples, fraction, seed)?;
        let test_indices: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.usage == test_partition)
            .map(|(i, _)| i)
            .collect();
        let digest = manifest_digest(&split.train_indices, &split.val_indices, &test_indices);
        Ok(Self {
            seed,
            train_fraction: fraction,
            test_partition,
            dataset_rows: samples.len(),
            train_indices: split.train_indices,
            val_indices: split.val_indices,
            test_indices,
            digest,
        })
    }

    /// Check the manifest against a parsed dataset: row count, partition
    /// membership of every index, and the stored digest.
    pub fn verify(&self, samples: &[Sample]) -> Result<(), DatasetError> {
        let mismatch = |msg: String| Err(DatasetError::ManifestMismatch(msg));
        if samples.len() != self.dataset_rows {
            return mismatch(format!(
                "manifest was built from {} rows, dataset has {}",
                self.dataset_rows,
                samples.len()
            ));
        }
        let check = |indices: &[usize], usage: Usage, what: &str| -> Result<(), DatasetError> {
            for &i in indices {
                match samples.get(i) {
                    Some(s) if s.usage == usage => {}
                    Some(s) => {
                        return Err(DatasetError::ManifestMismatch(format!(
                            "{what} index {i} is a {} row, expected {usage}",
                            s.usage
                        )))
                    }
                    None => {
                        return Err(DatasetError::ManifestMismatch(format!(
                            "{what} index {i} is out of range"
                        )))
                    }
                }
            }
            Ok(())
        };
        check(&self.train_indices, Usage::Training, "train")?;
        check(&self.val_indices, Usage::Training, "validation")?;
        check(&self.test_indices, self.test_partition, "test")?;
        let digest = manifest_digest(&self.train_indices, &self.val_indices, &self.test_indices);
        if digest != self.digest {
            return mismatch(format!(
                "digest {} does not match recomputed {digest}",
                self.digest
            ));
        }
        Ok(())
    }
}

/// Hex SHA-256 over the canonical text form of the three index lists.
pub fn manifest_digest(train: &[usize], val: &[usize], test: &[usize]) -> String {
    let mut canon = String::new();
    for (name, list) in [("train", train), ("val", val), ("test", test)] {
        canon.push_str(name);
        canon.push(':');
        let joined: Vec<String> = list.iter().map(usize::to_string).collect();
        canon.push_str(&joined.join(","));
        canon.push('\n');
    }
    sha256_hex(canon.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: usize, n_pixels: usize, usage: &str) -> String {
        let px = vec!["0"; n_pixels].join(" ");
        format!("{label},{px},{usage}")
    }

    fn csv_of(rows: &[String]) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    fn samples_with(counts: &[(EmotionLabel, usize)]) -> Vec<Sample> {
        let mut out = Vec::new();
        for &(label, n) in counts {
            for i in 0..n {
                out.push(Sample {
                    image: GrayImage::filled(IMAGE_SIDE, IMAGE_SIDE, (i % 256) as u8),
                    label,
                    usage: Usage::Training,
                });
            }
        }
        out
    }

    #[test]
    fn label_mapping_is_a_bijection() {
        for (i, l) in EmotionLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(EmotionLabel::from_index(i), Some(*l));
            assert_eq!(l.name().parse::<EmotionLabel>().unwrap(), *l);
        }
        assert_eq!(EmotionLabel::from_index(7), None);
        assert_eq!(EmotionLabel::Neutral.index(), 6);
    }

    #[test]
    fn parses_minimal_row() {
        let text = csv_of(&[row(3, 2304, "Training")]);
        let samples = parse_fer_csv(text.as_bytes()).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].label, EmotionLabel::Happy);
        assert_eq!(samples[0].usage, Usage::Training);
        assert!(samples[0].image.pixels().iter().all(|&p| p == 0));
        assert_eq!(samples[0].image.pixels().len(), 2304);
    }

    #[test]
    fn rejects_short_row_with_line_number() {
        let text = csv_of(&[row(0, 2304, "Training"), row(1, 2303, "Training")]);
        match parse_fer_csv(text.as_bytes()) {
            Err(DatasetError::MalformedRow { line, found }) => {
                assert_eq!(line, 3);
                assert_eq!(found, 2303);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_label_out_of_range() {
        let text = csv_of(&[row(7, 2304, "Training")]);
        assert!(matches!(
            parse_fer_csv(text.as_bytes()),
            Err(DatasetError::LabelRange { line: 2, .. })
        ));
    }

    #[test]
    fn rejects_unknown_usage() {
        let text = csv_of(&[row(2, 2304, "Validation")]);
        assert!(matches!(
            parse_fer_csv(text.as_bytes()),
            Err(DatasetError::Partition { line: 2, .. })
        ));
    }

    #[test]
    fn rejects_pixel_out_of_range() {
        let px = std::iter::once("256")
            .chain(std::iter::repeat_n("0", 2303))
            .collect::<Vec<_>>()
            .join(" ");
        let text = csv_of(&[format!("0,{px},Training")]);
        assert!(matches!(
            parse_fer_csv(text.as_bytes()),
            Err(DatasetError::InvalidPixel { .. })
        ));
    }

    #[test]
    fn rejects_wrong_header() {
        let text = "label,pixels,Usage\n";
        assert!(matches!(
            parse_fer_csv(text.as_bytes()),
            Err(DatasetError::Header { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let text = csv_of(&[row(3, 2304, "PrivateTest"), row(6, 2304, "PublicTest")]);
        let samples = parse_fer_csv(text.as_bytes()).unwrap();
        assert_eq!(write_fer_csv(&samples), text);
    }

    #[test]
    fn counts() {
        assert_eq!(class_counts(&[]).0, [0; 7]);
        let s = samples_with(&[(EmotionLabel::Angry, 3), (EmotionLabel::Surprise, 1)]);
        assert_eq!(class_counts(&s).0, [3, 0, 0, 0, 0, 1, 0]);
        assert_eq!(class_counts(&s).total(), 4);
    }

    #[test]
    fn fraction_parsing() {
        assert_eq!("0.875".parse::<TrainFraction>().unwrap(), TrainFraction::DEFAULT);
        assert_eq!("7/8".parse::<TrainFraction>().unwrap(), TrainFraction::DEFAULT);
        assert_eq!("14/16".parse::<TrainFraction>().unwrap().to_string(), "7/8");
        for bad in ["1", "0", "1.5", "0.0", "8/8", "x", "-0.5", "3/0"] {
            assert!(bad.parse::<TrainFraction>().is_err(), "{bad}");
        }
        assert_eq!(TrainFraction::DEFAULT.floor_of(80), 70);
        assert_eq!(TrainFraction::DEFAULT.floor_of(436), 381);
    }

    #[test]
    fn split_of_eighty() {
        let s = samples_with(&[(EmotionLabel::Fear, 80)]);
        let split = stratified_split(&s, TrainFraction::DEFAULT, 42).unwrap();
        assert_eq!(split.train_indices.len(), 70);
        assert_eq!(split.val_indices.len(), 10);
    }

    #[test]
    fn split_is_deterministic() {
        let s = samples_with(&[(EmotionLabel::Fear, 80), (EmotionLabel::Sad, 33)]);
        let a = SplitManifest::build(&s, TrainFraction::DEFAULT, 42, Usage::PrivateTest).unwrap();
        let b = SplitManifest::build(&s, TrainFraction::DEFAULT, 42, Usage::PrivateTest).unwrap();
        assert_eq!(a.digest, b.digest);
        assert_eq!(a, b);
        a.verify(&s).unwrap();
    }

    #[test]
    fn digest_changes_with_seed() {
        let s = samples_with(&[(EmotionLabel::Fear, 80), (EmotionLabel::Sad, 33)]);
        let digests: std::collections::HashSet<String> = (0..12)
            .map(|seed| {
                SplitManifest::build(&s, TrainFraction::DEFAULT, seed, Usage::PrivateTest)
                    .unwrap()
                    .digest
            })
            .collect();
        assert_eq!(digests.len(), 12);
    }

    #[test]
    fn singleton_class_is_unsplittable() {
        let s = samples_with(&[(EmotionLabel::Fear, 10), (EmotionLabel::Disgust, 1)]);
        assert!(matches!(
            stratified_split(&s, TrainFraction::DEFAULT, 1),
            Err(DatasetError::UnsplittableClass {
                label: EmotionLabel::Disgust,
                count: 1
            })
        ));
    }

    #[test]
    fn verify_detects_tampering() {
        let s = samples_with(&[(EmotionLabel::Fear, 16)]);
        let mut m = SplitManifest::build(&s, TrainFraction::DEFAULT, 3, Usage::PrivateTest).unwrap();
        m.val_indices.push(m.train_indices.pop().unwrap());
        m.val_indices.sort_unstable();
        assert!(matches!(m.verify(&s), Err(DatasetError::ManifestMismatch(_))));
    }
}
