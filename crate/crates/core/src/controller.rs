//! Two-phase training loop and its callbacks.
//!
//! Each epoch ends with the callbacks in a fixed order: best-checkpoint
//! tracking (validation accuracy, earliest epoch wins ties), learning-rate
//! reduction on plateau, then early stopping. The callback logic lives in
//! [`TrainLoopState::on_epoch_end`], a pure state machine over epoch records.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ParameterGroup, ParameterRole, TrainableModel};
use crate::optim::{self, OptimConfig, OptimError, OptimState, OptimizerKind};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("training diverged at epoch {epoch}: non-finite {what}")]
    Divergence {
        epoch: usize,
        what: &'static str,
        history: Vec<EpochRecord>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("history log: {0}")]
    Io(#[from] std::io::Error),
    #[error("task failed: {0}")]
    Task(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseName {
    Warmup,
    Finetune,
}

impl PhaseName {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseName::Warmup => "warmup",
            PhaseName::Finetune => "finetune",
        }
    }
}

impl fmt::Display for PhaseName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhaseName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "warmup" => Ok(PhaseName::Warmup),
            "finetune" => Ok(PhaseName::Finetune),
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreezePolicy {
    /// Only head groups train.
    FreezeBackbone,
    /// Everything trains except normalization parameters and statistics.
    UnfreezeAllExceptNormalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub name: PhaseName,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub optim: OptimConfig,
    pub freeze_policy: FreezePolicy,
}

impl PhaseConfig {
    /// 3 epochs, frozen backbone, Adam at 1e-3.
    pub fn warmup() -> Self {
        Self {
            name: PhaseName::Warmup,
            epochs: 3,
            optimizer: OptimizerKind::Adam,
            optim: OptimConfig {
                learning_rate: 1e-3,
                ..OptimConfig::default()
            },
            freeze_policy: FreezePolicy::FreezeBackbone,
        }
    }

    /// 7 epochs, all but normalization trainable, AdamW at 3e-5 with decay 1e-4.
    pub fn finetune() -> Self {
        Self {
            name: PhaseName::Finetune,
            epochs: 7,
            optimizer: OptimizerKind::AdamW,
            optim: OptimConfig {
                learning_rate: 3e-5,
                weight_decay: 1e-4,
                ..OptimConfig::default()
            },
            freeze_policy: FreezePolicy::UnfreezeAllExceptNormalization,
        }
    }

    pub fn default_schedule() -> Vec<PhaseConfig> {
        vec![Self::warmup(), Self::finetune()]
    }
}

pub fn validate_phases(phases: &[PhaseConfig]) -> Result<(), ControllerError> {
    if phases.is_empty() {
        return Err(ControllerError::Config("at least one phase is required".into()));
    }
    let mut seen_finetune = false;
    for p in phases {
        if p.epochs == 0 {
            return Err(ControllerError::Config(format!("phase {} has zero epochs", p.name)));
        }
        match p.name {
            PhaseName::Finetune => seen_finetune = true,
            PhaseName::Warmup if seen_finetune => {
                return Err(ControllerError::Config("warmup must precede finetune".into()))
            }
            PhaseName::Warmup => {}
        }
        p.optim.validate()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValLoss,
    ValAcc,
}

impl Monitor {
    pub fn value(self, r: &EpochRecord) -> f64 {
        match self {
            Monitor::ValLoss => r.val_loss,
            Monitor::ValAcc => r.val_acc,
        }
    }

    /// Whether the last value improves on the best of all earlier values.
    pub fn improved(self, values: &[f64], min_delta: f64) -> bool {
        let Some((&last, earlier)) = values.split_last() else {
            return false;
        };
        if earlier.is_empty() {
            return true;
        }
        match self {
            Monitor::ValLoss => {
                let best = earlier.iter().copied().fold(f64::INFINITY, f64::min);
                last < best - min_delta
            }
            Monitor::ValAcc => {
                let best = earlier.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                last > best + min_delta
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    pub enabled: bool,
    pub monitor: Monitor,
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            monitor: Monitor::ValLoss,
            factor: 0.3,
            patience: 2,
            min_delta: 0.0,
            min_lr: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopConfig {
    pub enabled: bool,
    pub monitor: Monitor,
    pub patience: usize,
    pub min_delta: f64,
    pub restore_best: bool,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            monitor: Monitor::ValLoss,
            patience: 3,
            min_delta: 0.0,
            restore_best: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CallbackConfig {
    pub plateau: PlateauConfig,
    pub early_stop: EarlyStopConfig,
}

impl CallbackConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor < 1.0) || p.patience == 0 || p.min_lr < 0.0 {
            return Err(ControllerError::Config(format!(
                "plateau needs factor in (0,1), patience >= 1, min_lr >= 0; got {p:?}"
            )));
        }
        if self.early_stop.patience == 0 {
            return Err(ControllerError::Config("early-stop patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: PhaseName,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// `(new_lr, new_wait)` after observing the last entry of `values`.
pub fn plateau_update(values: &[f64], wait: usize, current_lr: f64, cfg: &PlateauConfig) -> (f64, usize) {
    if cfg.monitor.improved(values, cfg.min_delta) {
        return (current_lr, 0);
    }
    let wait = wait + 1;
    if wait >= cfg.patience {
        let lr = if current_lr > cfg.min_lr {
            (current_lr * cfg.factor).max(cfg.min_lr)
        } else {
            current_lr
        };
        (lr, 0)
    } else {
        (current_lr, wait)
    }
}

/// `(stop, new_wait)` after observing the last entry of `values`.
pub fn early_stop_update(values: &[f64], wait: usize, cfg: &EarlyStopConfig) -> (bool, usize) {
    if cfg.monitor.improved(values, cfg.min_delta) {
        return (false, 0);
    }
    let wait = wait + 1;
    (wait >= cfg.patience, wait)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallbackDecision {
    pub new_best: bool,
    pub next_lr: f64,
    pub lr_reduced: bool,
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLoopState {
    pub global_epoch: usize,
    pub current_lr: f64,
    pub best_val_acc: f64,
    pub best_val_loss: f64,
    pub best_epoch: Option<usize>,
    pub es_wait: usize,
    pub plateau_wait: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainLoopState {
    pub fn new(initial_lr: f64) -> Self {
        Self {
            global_epoch: 0,
            current_lr: initial_lr,
            best_val_acc: f64::NEG_INFINITY,
            best_val_loss: f64::INFINITY,
            best_epoch: None,
            es_wait: 0,
            plateau_wait: 0,
            history: Vec::new(),
        }
    }

    /// Reset what a new phase resets: learning rate and plateau counter.
    pub fn begin_phase(&mut self, lr: f64) {
        self.current_lr = lr;
        self.plateau_wait = 0;
    }

    /// Record `record` and run checkpoint, plateau and early-stop in that order.
    pub fn on_epoch_end(&mut self, record: EpochRecord, cfg: &CallbackConfig) -> CallbackDecision {
        self.global_epoch = record.epoch;
        self.best_val_loss = self.best_val_loss.min(record.val_loss);
        let new_best = record.val_acc > self.best_val_acc;
        if new_best {
            self.best_val_acc = record.val_acc;
            self.best_epoch = Some(record.epoch);
        }
        self.history.push(record);

        let mut lr_reduced = false;
        if cfg.plateau.enabled {
            let values: Vec<f64> = self.history.iter().map(|r| cfg.plateau.monitor.value(r)).collect();
            let (lr, wait) = plateau_update(&values, self.plateau_wait, self.current_lr, &cfg.plateau);
            lr_reduced = lr != self.current_lr;
            self.current_lr = lr;
            self.plateau_wait = wait;
        }

        let mut stop = false;
        if cfg.early_stop.enabled {
            let values: Vec<f64> = self
                .history
                .iter()
                .map(|r| cfg.early_stop.monitor.value(r))
                .collect();
            let (s, wait) = early_stop_update(&values, self.es_wait, &cfg.early_stop);
            stop = s;
            self.es_wait = wait;
        }

        CallbackDecision {
            new_best,
            next_lr: self.current_lr,
            lr_reduced,
            stop,
        }
    }
}

/// Set `trainable` on every group according to `policy`. Idempotent.
pub fn apply_freeze_policy(model: &mut dyn TrainableModel, policy: FreezePolicy) -> Result<(), ModelError> {
    if !model.supports_freezing() {
        return Err(ModelError::Capability(format!(
            "backend {} cannot apply {policy:?}",
            model.backend_name()
        )));
    }
    for g in model.groups_mut() {
        g.trainable = match policy {
            FreezePolicy::FreezeBackbone => g.role == ParameterRole::Head,
            FreezePolicy::UnfreezeAllExceptNormalization => g.role != ParameterRole::Normalization,
        };
    }
    Ok(())
}

/// Optimizer bound to the parameter groups of one model for one phase.
#[derive(Debug, Clone)]
pub struct PhaseOptimizer {
    pub kind: OptimizerKind,
    pub config: OptimConfig,
    states: Vec<OptimState>,
}

impl PhaseOptimizer {
    pub fn new(kind: OptimizerKind, config: OptimConfig, model: &dyn TrainableModel) -> Self {
        let states = model.groups().iter().map(|g| OptimState::new(g.len())).collect();
        Self {
            kind,
            config,
            states,
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Step every trainable group with `grads[i] * scale`.
    pub fn apply(
        &mut self,
        model: &mut dyn TrainableModel,
        grads: &[Vec<f64>],
        scale: f64,
    ) -> Result<(), ControllerError> {
        let groups = model.groups_mut();
        if grads.len() != groups.len() {
            return Err(ControllerError::Task(format!(
                "{} gradient vectors for {} parameter groups",
                grads.len(),
                groups.len()
            )));
        }
        for ((g, grad), state) in groups.iter_mut().zip(grads).zip(&mut self.states) {
            if !g.trainable || g.is_empty() {
                continue;
            }
            let scaled: Vec<f64> = grad.iter().map(|v| v * scale).collect();
            optim::step(self.kind, &mut g.values, &scaled, state, &self.config, g.decay)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// Supplies one epoch of optimisation and a validation pass.
pub trait EpochTask {
    fn train_epoch(
        &mut self,
        model: &mut dyn TrainableModel,
        optimizer: &mut PhaseOptimizer,
        epoch: usize,
    ) -> Result<EpochMetrics, ControllerError>;

    fn validate(&mut self, model: &dyn TrainableModel) -> Result<EpochMetrics, ControllerError>;
}

pub trait HistorySink {
    fn record(&mut self, record: &EpochRecord) -> std::io::Result<()>;
}

pub const HISTORY_HEADER: &str = "epoch,phase,lr,train_loss,train_acc,val_loss,val_acc";

/// Incremental CSV history writer; flushes after every row.
pub struct CsvHistoryWriter<W: Write> {
    out: W,
}

impl<W: Write> CsvHistoryWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{HISTORY_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn history_row(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.epoch, r.phase, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc
    )
}

impl<W: Write> HistorySink for CsvHistoryWriter<W> {
    fn record(&mut self, record: &EpochRecord) -> std::io::Result<()> {
        writeln!(self.out, "{}", history_row(record))?;
        self.out.flush()
    }
}

impl HistorySink for Vec<EpochRecord> {
    fn record(&mut self, record: &EpochRecord) -> std::io::Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("history line {line}: {message}")]
pub struct HistoryParseError {
    pub line: usize,
    pub message: String,
}

pub fn parse_history_csv(text: &str) -> Result<Vec<EpochRecord>, HistoryParseError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == HISTORY_HEADER => {}
        Some((_, h)) => {
            return Err(HistoryParseError {
                line: 1,
                message: format!("expected header {HISTORY_HEADER:?}, found {h:?}"),
            })
        }
        None => {
            return Err(HistoryParseError {
                line: 1,
                message: "empty file".into(),
            })
        }
    }
    let mut out: Vec<EpochRecord> = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let err = |message: String| HistoryParseError { line, message };
        let f: Vec<&str> = raw.split(',').collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64, HistoryParseError> {
            s.parse::<f64>()
                .map_err(|_| err(format!("{what} {s:?} is not a number")))
        };
        let epoch = f[0]
            .parse::<usize>()
            .map_err(|_| err(format!("epoch {:?} is not an integer", f[0])))?;
        if let Some(prev) = out.last() {
            if epoch <= prev.epoch {
                return Err(err(format!("epoch {epoch} does not follow {}", prev.epoch)));
            }
        }
        out.push(EpochRecord {
            epoch,
            phase: f[1].parse().map_err(err)?,
            lr: num(f[2], "lr")?,
            train_loss: num(f[3], "train_loss")?,
            train_acc: num(f[4], "train_acc")?,
            val_loss: num(f[5], "val_loss")?,
            val_acc: num(f[6], "val_acc")?,
        });
    }
    Ok(out)
}

/// Parameters and validation metrics of the best epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct BestCheckpoint {
    pub epoch: usize,
    pub phase: PhaseName,
    pub val_loss: f64,
    pub val_acc: f64,
    pub groups: Vec<ParameterGroup>,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub best: BestCheckpoint,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub final_state: TrainLoopState,
}

/// Run `phases` in order on `model`.
///
/// On early stop with `restore_best`, the model's parameters are replaced by
/// the best checkpoint's. A non-finite loss aborts with
/// [`ControllerError::Divergence`], which carries the completed epochs.
pub fn run_training(
    model: &mut dyn TrainableModel,
    task: &mut dyn EpochTask,
    phases: &[PhaseConfig],
    callbacks: &CallbackConfig,
    mut sink: Option<&mut dyn HistorySink>,
) -> Result<TrainingOutcome, ControllerError> {
    validate_phases(phases)?;
    callbacks.validate()?;

    let mut state = TrainLoopState::new(phases[0].optim.learning_rate);
    let mut best: Option<BestCheckpoint> = None;
    let mut stopped_early = false;

    'phases: for phase in phases {
        apply_freeze_policy(model, phase.freeze_policy)?;
        let mut optimizer = PhaseOptimizer::new(phase.optimizer, phase.optim.clone(), model);
        state.begin_phase(phase.optim.learning_rate);

        for _ in 0..phase.epochs {
            let epoch = state.global_epoch + 1;
            optimizer.set_learning_rate(state.current_lr);
            let diverged = |what, state: &TrainLoopState| ControllerError::Divergence {
                epoch,
                what,
                history: state.history.clone(),
            };

            let train = task.train_epoch(model, &mut optimizer, epoch)?;
            if !train.loss.is_finite() {
                return Err(diverged("training loss", &state));
            }
            let val = task.validate(model)?;
            if !val.loss.is_finite() {
                return Err(diverged("validation loss", &state));
            }

            let record = EpochRecord {
                epoch,
                phase: phase.name,
                lr: state.current_lr,
                train_loss: train.loss,
                train_acc: train.accuracy,
                val_loss: val.loss,
                val_acc: val.accuracy,
            };
            if let Some(s) = sink.as_deref_mut() {
                s.record(&record)?;
            }
            let decision = state.on_epoch_end(record, callbacks);
            if decision.new_best {
                best = Some(BestCheckpoint {
                    epoch,
                    phase: phase.name,
                    val_loss: val.loss,
                    val_acc: val.accuracy,
                    groups: model.groups().to_vec(),
                });
            }
            if decision.stop {
                stopped_early = true;
                break 'phases;
            }
        }
    }

    let best = best.expect("at least one epoch ran");
    if stopped_early && callbacks.early_stop.restore_best {
        for (dst, src) in model.groups_mut().iter_mut().zip(&best.groups) {
            dst.values.clone_from(&src.values);
        }
    }
    Ok(TrainingOutcome {
        history: state.history.clone(),
        best,
        stopped_early,
        final_state: state,
    })
}
