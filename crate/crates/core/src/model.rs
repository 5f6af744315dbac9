//! Trainable-model abstraction, classification head, the softmax-regression
//! reference backend, and the adapter contract for pretrained backbones.
//!
//! Parameters live in named [`ParameterGroup`]s tagged with a role. Freeze
//! policies and the optimizer only ever look at the tags, so a pretrained
//! backbone behind an adapter trains with exactly the same controller as the
//! reference backend.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{preprocess_to, BACKBONE_INPUT_SIDE};
use crate::dataset::{GrayImage, IMAGE_SIDE, NUM_CLASSES};
use crate::loss::{ce_grad_logits, log_softmax, softmax};
use crate::rng::keyed_rng;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model cannot honour the request: {0}")]
    Capability(String),
    #[error("unknown parameter role tag {0:?}")]
    UnknownRole(String),
    #[error("backbone adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("shape error: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParameterRole {
    Backbone,
    Head,
    Normalization,
}

impl ParameterRole {
    pub fn tag(self) -> &'static str {
        match self {
            ParameterRole::Backbone => "backbone",
            ParameterRole::Head => "head",
            ParameterRole::Normalization => "normalization",
        }
    }
}

impl fmt::Display for ParameterRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ParameterRole {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "backbone" => Ok(ParameterRole::Backbone),
            "head" => Ok(ParameterRole::Head),
            "normalization" => Ok(ParameterRole::Normalization),
            other => Err(ModelError::UnknownRole(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGroup {
    pub name: String,
    pub role: ParameterRole,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub trainable: bool,
    /// Whether decoupled weight decay applies (off for biases and normalization).
    pub decay: bool,
}

impl ParameterGroup {
    pub fn zeros(name: &str, role: ParameterRole, shape: Vec<usize>, decay: bool) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.to_string(),
            role,
            shape,
            values: vec![0.0; len],
            trainable: role != ParameterRole::Normalization,
            decay,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub feature_dim: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
}

impl HeadSpec {
    pub fn new(feature_dim: usize, dropout_rate: f64, num_classes: usize) -> Result<Self, ModelError> {
        if feature_dim == 0 {
            return Err(ModelError::Shape("feature_dim must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(ModelError::Shape(format!(
                "dropout_rate = {dropout_rate} must lie in [0, 1)"
            )));
        }
        if num_classes < 2 {
            return Err(ModelError::Shape("num_classes must be >= 2".into()));
        }
        Ok(Self {
            feature_dim,
            dropout_rate,
            num_classes,
        })
    }

    pub fn param_count(&self) -> usize {
        self.feature_dim * self.num_classes + self.num_classes
    }
}

/// How a grayscale face becomes a model input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputSpec {
    /// Native 48x48 pixels, block-averaged by `downsample`, scaled to [0, 1].
    Flat { downsample: usize },
    /// Channel-replicated bilinear resize to `side`, scaled to [0, 1], HWC.
    Image { side: usize },
}

impl InputSpec {
    pub const BACKBONE: InputSpec = InputSpec::Image {
        side: BACKBONE_INPUT_SIDE,
    };

    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            InputSpec::Flat { downsample } if downsample == 0 || !IMAGE_SIDE.is_multiple_of(downsample) => {
                Err(ModelError::Shape(format!(
                    "downsample factor {downsample} must divide {IMAGE_SIDE}"
                )))
            }
            InputSpec::Image { side: 0 } => Err(ModelError::Shape("image side must be >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            InputSpec::Flat { downsample } => (IMAGE_SIDE / downsample).pow(2),
            InputSpec::Image { side } => side * side * 3,
        }
    }

    /// Scaling applied to raw 0..=255 intensities.
    pub fn scale(&self) -> f64 {
        1.0 / 255.0
    }

    pub fn features(&self, image: &GrayImage) -> Vec<f64> {
        match *self {
            InputSpec::Flat { downsample } => {
                let side = image.width() / downsample;
                let rows = image.height() / downsample;
                let norm = self.scale() / (downsample * downsample) as f64;
                let mut out = Vec::with_capacity(side * rows);
                for by in 0..rows {
                    for bx in 0..side {
                        let mut acc = 0u32;
                        for y in by * downsample..(by + 1) * downsample {
                            for x in bx * downsample..(bx + 1) * downsample {
                                acc += image.get(x, y) as u32;
                            }
                        }
                        out.push(acc as f64 * norm);
                    }
                }
                out
            }
            InputSpec::Image { side } => preprocess_to(image, side, self.scale())
                .data
                .into_iter()
                .map(f64::from)
                .collect(),
        }
    }
}

/// Per-sample key for dropout masks.
pub type SampleKey = [u64; 3];

/// Result of a forward/backward pass over one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    /// `sum_i w_i CE_i` over the batch.
    pub weighted_loss_sum: f64,
    pub probs: Vec<Vec<f64>>,
    /// Gradient of `weighted_loss_sum`, one vector per parameter group.
    pub grads: Vec<Vec<f64>>,
}

pub trait TrainableModel: Send + Sync {
    fn backend_name(&self) -> &str;

    fn input_spec(&self) -> InputSpec;

    fn head_spec(&self) -> HeadSpec;

    fn num_classes(&self) -> usize {
        self.head_spec().num_classes
    }

    fn groups(&self) -> &[ParameterGroup];

    fn groups_mut(&mut self) -> &mut [ParameterGroup];

    /// Class-probability rows. `dropout_keys` is `Some` in training mode,
    /// with one key per input row.
    fn forward(&self, inputs: &[Vec<f64>], dropout_keys: Option<&[SampleKey]>) -> Vec<Vec<f64>>;

    /// Weighted loss and its parameter gradients.
    fn loss_and_gradients(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        weights: &[f64],
        dropout_keys: Option<&[SampleKey]>,
    ) -> BatchOutput;

    /// Models may refuse a freeze policy they cannot implement.
    fn supports_freezing(&self) -> bool {
        true
    }
}

/// Mean over the spatial positions of an `H x W x C` map (HWC order).
pub fn global_average_pool(map: &[f64], height: usize, width: usize, channels: usize) -> Vec<f64> {
    assert_eq!(map.len(), height * width * channels, "feature map shape");
    assert!(height >= 1 && width >= 1);
    let mut out = vec![0.0; channels];
    for px in map.chunks_exact(channels) {
        for (o, v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    let n = (height * width) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Inverted dropout. Identity when `training` is false or `rate` is 0.
pub fn dropout_apply(vec: &[f64], rate: f64, key: SampleKey, training: bool) -> Vec<f64> {
    if !training || rate == 0.0 {
        return vec.to_vec();
    }
    dropout_mask(vec.len(), rate, key)
        .into_iter()
        .zip(vec)
        .map(|(m, v)| m * v)
        .collect()
}

/// Multipliers of an inverted-dropout mask: 0 or `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, key: SampleKey) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    let mut rng = keyed_rng("dropout", &key);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// `softmax(W^T dropout(features) + b)`; `weights` is `F x K` row-major.
pub fn head_forward(
    features: &[f64],
    weights: &[f64],
    bias: &[f64],
    rate: f64,
    key: SampleKey,
    training: bool,
) -> Vec<f64> {
    softmax(&head_logits(
        &dropout_apply(features, rate, key, training),
        weights,
        bias,
    ))
}

fn head_logits(features: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let k = bias.len();
    assert_eq!(weights.len(), features.len() * k, "head weight shape");
    let mut logits = bias.to_vec();
    for (x, row) in features.iter().zip(weights.chunks_exact(k)) {
        if *x == 0.0 {
            continue;
        }
        for (z, w) in logits.iter_mut().zip(row) {
            *z += x * w;
        }
    }
    logits
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
}

pub fn count_params(model: &dyn TrainableModel) -> ParamCount {
    let groups = model.groups();
    ParamCount {
        total: groups.iter().map(ParameterGroup::len).sum(),
        trainable: groups.iter().filter(|g| g.trainable).map(ParameterGroup::len).sum(),
    }
}

/// Parameter budget expected of a full pretrained-backbone assembly.
pub const BACKBONE_PARAM_RANGE: RangeInclusive<usize> = 9_000_000..=9_500_000;

/// A configuration warning when `count` falls outside [`BACKBONE_PARAM_RANGE`].
pub fn param_budget_warning(count: usize) -> Option<String> {
    (!BACKBONE_PARAM_RANGE.contains(&count)).then(|| {
        format!(
            "parameter count {count} is outside the expected {}..={} for the pretrained assembly",
            BACKBONE_PARAM_RANGE.start(),
            BACKBONE_PARAM_RANGE.end()
        )
    })
}

pub const REFERENCE_BACKEND: &str = "reference";

/// Softmax regression over flattened pixels: the head applied directly to the input.
#[derive(Debug, Clone)]
pub struct ReferenceModel {
    head: HeadSpec,
    input: InputSpec,
    groups: Vec<ParameterGroup>,
}

impl ReferenceModel {
    const KERNEL: usize = 1;
    const BIAS: usize = 2;

    /// Zero-initialised model: an empty backbone group and the two head groups.
    pub fn new(input: InputSpec, num_classes: usize, dropout_rate: f64) -> Result<Self, ModelError> {
        input.validate()?;
        let head = HeadSpec::new(input.dim(), dropout_rate, num_classes)?;
        let groups = vec![
            ParameterGroup::zeros("backbone", ParameterRole::Backbone, vec![0], true),
            ParameterGroup::zeros(
                "head.kernel",
                ParameterRole::Head,
                vec![head.feature_dim, num_classes],
                true,
            ),
            ParameterGroup::zeros("head.bias", ParameterRole::Head, vec![num_classes], false),
        ];
        Ok(Self {
            head,
            input,
            groups,
        })
    }

    /// Rebuild from stored groups (e.g. a checkpoint); names and shapes must match.
    pub fn from_groups(
        input: InputSpec,
        head: HeadSpec,
        groups: Vec<ParameterGroup>,
    ) -> Result<Self, ModelError> {
        let mut model = Self::new(input, head.num_classes, head.dropout_rate)?;
        if groups.len() != model.groups.len() {
            return Err(ModelError::Shape(format!(
                "expected {} parameter groups, found {}",
                model.groups.len(),
                groups.len()
            )));
        }
        for (dst, src) in model.groups.iter_mut().zip(groups) {
            if dst.name != src.name || dst.len() != src.len() || dst.role != src.role {
                return Err(ModelError::Shape(format!(
                    "group {:?} ({} values) does not match expected {:?} ({} values)",
                    src.name,
                    src.len(),
                    dst.name,
                    dst.len()
                )));
            }
            dst.values = src.values;
            dst.trainable = src.trainable;
        }
        Ok(model)
    }

    fn kernel(&self) -> &[f64] {
        &self.groups[Self::KERNEL].values
    }

    fn bias(&self) -> &[f64] {
        &self.groups[Self::BIAS].values
    }

    fn dropped(&self, x: &[f64], key: Option<&SampleKey>) -> Vec<f64> {
        match key {
            Some(k) => dropout_apply(x, self.head.dropout_rate, *k, true),
            None => x.to_vec(),
        }
    }
}

impl TrainableModel for ReferenceModel {
    fn backend_name(&self) -> &str {
        REFERENCE_BACKEND
    }

    fn input_spec(&self) -> InputSpec {
        self.input
    }

    fn head_spec(&self) -> HeadSpec {
        self.head
    }

    fn groups(&self) -> &[ParameterGroup] {
        &self.groups
    }

    fn groups_mut(&mut self) -> &mut [ParameterGroup] {
        &mut self.groups
    }

    fn forward(&self, inputs: &[Vec<f64>], dropout_keys: Option<&[SampleKey]>) -> Vec<Vec<f64>> {
        inputs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let h = self.dropped(x, dropout_keys.map(|k| &k[i]));
                softmax(&head_logits(&h, self.kernel(), self.bias()))
            })
            .collect()
    }

    fn loss_and_gradients(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        weights: &[f64],
        dropout_keys: Option<&[SampleKey]>,
    ) -> BatchOutput {
        let k = self.head.num_classes;
        let mut grad_kernel = vec![0.0; self.kernel().len()];
        let mut grad_bias = vec![0.0; k];
        let mut loss = 0.0;
        let mut probs = Vec::with_capacity(inputs.len());

        for (i, x) in inputs.iter().enumerate() {
            let h = self.dropped(x, dropout_keys.map(|keys| &keys[i]));
            let logits = head_logits(&h, self.kernel(), self.bias());
            let w = weights[i];
            loss -= w * log_softmax(&logits)
                .iter()
                .zip(&targets[i])
                .map(|(lp, t)| t * lp)
                .sum::<f64>();
            let delta = ce_grad_logits(&logits, &targets[i], w);
            for (hf, row) in h.iter().zip(grad_kernel.chunks_exact_mut(k)) {
                if *hf == 0.0 {
                    continue;
                }
                for (g, d) in row.iter_mut().zip(&delta) {
                    *g += hf * d;
                }
            }
            for (g, d) in grad_bias.iter_mut().zip(&delta) {
                *g += d;
            }
            probs.push(softmax(&logits));
        }

        BatchOutput {
            weighted_loss_sum: loss,
            probs,
            grads: vec![Vec::new(), grad_kernel, grad_bias],
        }
    }
}

/// Build the reference backend with the default 7-way head.
pub fn reference_model_build(input: InputSpec, dropout_rate: f64) -> Result<ReferenceModel, ModelError> {
    ReferenceModel::new(input, NUM_CLASSES, dropout_rate)
}

/// Where an adapter should load pretrained weights from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightsSource {
    pub runtime: String,
    pub location: Option<String>,
}

/// An external runtime able to provide a pretrained feature extractor.
pub trait BackboneRuntime: Send + Sync {
    fn name(&self) -> &str;

    fn build(&self, source: &WeightsSource, head: HeadSpec) -> Result<Box<dyn TrainableModel>, ModelError>;
}

/// Runtimes available to this process. Empty unless something registers one.
#[derive(Default)]
pub struct AdapterRegistry {
    runtimes: Vec<Box<dyn BackboneRuntime>>,
}

impl AdapterRegistry {
    pub fn register(&mut self, runtime: Box<dyn BackboneRuntime>) {
        self.runtimes.push(runtime);
    }

    pub fn names(&self) -> Vec<&str> {
        self.runtimes.iter().map(|r| r.name()).collect()
    }

    fn find(&self, name: &str) -> Option<&dyn BackboneRuntime> {
        self.runtimes.iter().find(|r| r.name() == name).map(|r| r.as_ref())
    }
}

/// A model obtained through an adapter, with its parameter-budget check.
pub struct AdaptedModel {
    pub model: Box<dyn TrainableModel>,
    pub params: ParamCount,
    pub budget_warning: Option<String>,
}

/// Wrap an external pretrained backbone behind [`TrainableModel`].
///
/// The returned model must expose a non-empty head group and at least one
/// backbone group so freeze policies apply.
pub fn backbone_adapter(
    registry: &AdapterRegistry,
    source: &WeightsSource,
    head: HeadSpec,
) -> Result<AdaptedModel, ModelError> {
    let runtime = registry.find(&source.runtime).ok_or_else(|| {
        ModelError::AdapterUnavailable(format!(
            "no runtime named {:?} is registered (available: {:?})",
            source.runtime,
            registry.names()
        ))
    })?;
    let model = runtime.build(source, head)?;
    let groups = model.groups();
    if !groups.iter().any(|g| g.role == ParameterRole::Head && !g.is_empty()) {
        return Err(ModelError::Capability("adapter model exposes no head parameters".into()));
    }
    if !groups.iter().any(|g| g.role == ParameterRole::Backbone) {
        return Err(ModelError::Capability("adapter model exposes no backbone group".into()));
    }
    let params = count_params(model.as_ref());
    Ok(AdaptedModel {
        budget_warning: param_budget_warning(params.total),
        params,
        model,
    })
}
