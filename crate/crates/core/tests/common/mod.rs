#![allow(dead_code)]

use fer_core::controller::{ControllerError, EpochMetrics, EpochTask, PhaseOptimizer};
use fer_core::model::{
    BackboneRuntime, BatchOutput, HeadSpec, InputSpec, ModelError, ParameterGroup, ParameterRole,
    SampleKey, TrainableModel, WeightsSource,
};

/// Model with arbitrary groups whose gradient is all ones.
pub struct MockModel {
    pub groups: Vec<ParameterGroup>,
    pub head: HeadSpec,
    pub freezable: bool,
    pub name: String,
}

impl MockModel {
    pub fn new(sizes: &[(&str, ParameterRole, usize)]) -> Self {
        let groups = sizes
            .iter()
            .map(|&(name, role, n)| {
                let mut g = ParameterGroup::zeros(name, role, vec![n], role != ParameterRole::Normalization);
                g.values.iter_mut().enumerate().for_each(|(i, v)| *v = 0.5 + i as f64 * 1e-3);
                g
            })
            .collect();
        Self {
            groups,
            head: HeadSpec::new(4, 0.5, 7).unwrap(),
            freezable: true,
            name: "mock".into(),
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.groups.iter().filter(|g| g.trainable).map(|g| g.len()).sum()
    }
}

impl TrainableModel for MockModel {
    fn backend_name(&self) -> &str {
        &self.name
    }

    fn input_spec(&self) -> InputSpec {
        InputSpec::Flat { downsample: 24 }
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

    fn forward(&self, inputs: &[Vec<f64>], _keys: Option<&[SampleKey]>) -> Vec<Vec<f64>> {
        vec![vec![1.0 / 7.0; 7]; inputs.len()]
    }

    fn loss_and_gradients(
        &self,
        inputs: &[Vec<f64>],
        _targets: &[Vec<f64>],
        _weights: &[f64],
        keys: Option<&[SampleKey]>,
    ) -> BatchOutput {
        BatchOutput {
            weighted_loss_sum: 7f64.ln() * inputs.len() as f64,
            probs: self.forward(inputs, keys),
            grads: self.groups.iter().map(|g| vec![1.0; g.len()]).collect(),
        }
    }

    fn supports_freezing(&self) -> bool {
        self.freezable
    }
}

/// Runtime producing a mock EfficientNet-sized assembly.
pub struct MockRuntime {
    pub backbone: usize,
    pub norm: usize,
}

pub const MOCK_RUNTIME: &str = "mock-efficientnet";

impl BackboneRuntime for MockRuntime {
    fn name(&self) -> &str {
        MOCK_RUNTIME
    }

    fn build(&self, _source: &WeightsSource, head: HeadSpec) -> Result<Box<dyn TrainableModel>, ModelError> {
        let mut m = MockModel::new(&[
            ("stem+blocks", ParameterRole::Backbone, self.backbone),
            ("bn", ParameterRole::Normalization, self.norm),
            ("head.kernel", ParameterRole::Head, head.feature_dim * head.num_classes),
            ("head.bias", ParameterRole::Head, head.num_classes),
        ]);
        m.head = head;
        m.name = MOCK_RUNTIME.into();
        Ok(Box::new(m))
    }
}

/// Epoch task replaying scripted validation values. Each training epoch
/// writes the epoch number into the first value of every group so that
/// restored parameters identify their epoch.
pub struct ScriptedTask {
    pub val: Vec<(f64, f64)>,
    pub train_loss: Vec<f64>,
    current: usize,
}

impl ScriptedTask {
    pub fn from_acc(acc: &[f64]) -> Self {
        Self {
            val: acc.iter().enumerate().map(|(i, &a)| (1.0 / (i + 1) as f64, a)).collect(),
            train_loss: vec![1.0; acc.len()],
            current: 0,
        }
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self {
            val: pairs.to_vec(),
            train_loss: vec![1.0; pairs.len()],
            current: 0,
        }
    }
}

pub fn epoch_marker(model: &dyn TrainableModel) -> f64 {
    model.groups().iter().find(|g| !g.is_empty()).unwrap().values[0]
}

impl EpochTask for ScriptedTask {
    fn train_epoch(
        &mut self,
        model: &mut dyn TrainableModel,
        _optimizer: &mut PhaseOptimizer,
        epoch: usize,
    ) -> Result<EpochMetrics, ControllerError> {
        for g in model.groups_mut() {
            if let Some(v) = g.values.first_mut() {
                *v = epoch as f64;
            }
        }
        self.current = epoch;
        Ok(EpochMetrics {
            loss: self.train_loss[epoch - 1],
            accuracy: 0.5,
        })
    }

    fn validate(&mut self, _model: &dyn TrainableModel) -> Result<EpochMetrics, ControllerError> {
        let (loss, accuracy) = self.val[self.current - 1];
        Ok(EpochMetrics { loss, accuracy })
    }
}

/// Central finite difference of `f` along every coordinate of `x`.
pub fn finite_difference(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub mod oracle {
    use fer_core::loss::ce_grad_logits;
    use fer_core::model::{InputSpec, ReferenceModel, SampleKey, TrainableModel};
    use fer_core::rng::keyed_rng;
    use rand::Rng;

    use super::{finite_difference, relative_error};

    pub const FD_STEP: f64 = 1e-4;

    /// Smoothed one-hot target written out directly.
    pub fn target(class: usize, k: usize, eps: f64) -> Vec<f64> {
        (0..k)
            .map(|j| if j == class { 1.0 - eps + eps / k as f64 } else { eps / k as f64 })
            .collect()
    }

    /// `-w * sum_k t_k * ln(exp(z_k) / sum_j exp(z_j))` without max-shifting.
    pub fn naive_loss(logits: &[f64], target: &[f64], w: f64) -> f64 {
        let denom: f64 = logits.iter().map(|z| z.exp()).sum();
        -w * logits
            .iter()
            .zip(target)
            .map(|(z, t)| t * (z.exp() / denom).ln())
            .sum::<f64>()
    }

    /// Relative error of the analytic logit gradient on seeded case `case`.
    pub fn logit_gradient_case(case: u64) -> f64 {
        let mut rng = keyed_rng("fd-logits", &[case]);
        let k = 7;
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let class = rng.random_range(0..k);
        let w = rng.random_range(0.25..4.0);
        let t = target(class, k, 0.06);
        let analytic = ce_grad_logits(&logits, &t, w);
        let numeric = finite_difference(&logits, FD_STEP, |z| naive_loss(z, &t, w));
        relative_error(&analytic, &numeric)
    }

    /// Relative error of the reference model's parameter gradients on seeded
    /// case `case`; odd cases run with dropout masks.
    pub fn model_gradient_case(case: u64) -> f64 {
        let mut rng = keyed_rng("fd-model", &[case]);
        let mut model = ReferenceModel::new(InputSpec::Flat { downsample: 8 }, 7, 0.5).unwrap();
        let dim = model.input_spec().dim();
        for g in model.groups_mut() {
            for v in &mut g.values {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let batch = 4;
        let inputs: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let targets: Vec<Vec<f64>> = (0..batch).map(|_| target(rng.random_range(0..7), 7, 0.06)).collect();
        let weights: Vec<f64> = (0..batch).map(|_| rng.random_range(0.25..4.0)).collect();
        let keys: Vec<SampleKey> = (0..batch as u64).map(|i| [case, 1, i]).collect();
        let keys = (case % 2 == 1).then_some(keys.as_slice());

        let out = model.loss_and_gradients(&inputs, &targets, &weights, keys);
        let mut analytic = Vec::new();
        let mut params = Vec::new();
        let mut layout = Vec::new();
        for (gi, (g, grad)) in model.groups().iter().zip(&out.grads).enumerate() {
            assert_eq!(g.len(), grad.len());
            analytic.extend_from_slice(grad);
            params.extend_from_slice(&g.values);
            layout.push((gi, g.len()));
        }
        let numeric = finite_difference(&params, FD_STEP, |p| {
            let mut probe = ReferenceModel::from_groups(
                model.input_spec(),
                model.head_spec(),
                model.groups().to_vec(),
            )
            .unwrap();
            let mut offset = 0;
            for &(gi, len) in &layout {
                probe.groups_mut()[gi].values.copy_from_slice(&p[offset..offset + len]);
                offset += len;
            }
            probe
                .loss_and_gradients(&inputs, &targets, &weights, keys)
                .weighted_loss_sum
        });
        relative_error(&analytic, &numeric)
    }
}
