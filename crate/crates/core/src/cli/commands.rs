//! Command implementations. Each returns a summary value and writes its
//! artefacts under an output directory; none of them print.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{Backend, RunConfig};
use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::controller::{run_training, CsvHistoryWriter, EpochRecord, parse_history_csv};
use crate::dataset::{
    class_counts, class_counts_at, parse_fer_csv, write_fer_csv, DatasetError, EmotionLabel,
    Sample, SplitManifest, TrainFraction, Usage, NUM_CLASSES,
};
use crate::eval::{
    confusion, export_curves, normalize_rows, normalized_csv, parse_prior_work, phase_boundaries,
    render_tables, report, ClassReport, RenderMeta, DEFAULT_PRIOR_WORK,
};
use crate::loss::{compute_present_class_weights, ClassWeights};
use crate::model::{
    backbone_adapter, count_params, reference_model_build, AdapterRegistry, InputSpec, ModelError,
    ParamCount, ReferenceModel, TrainableModel, WeightsSource, REFERENCE_BACKEND,
};
use crate::pipeline::{evaluate_inputs, prepare_inputs, SupervisedTask};
use crate::rng::sha256_hex;
use crate::synthetic::{separable, with_official_counts, SyntheticSpec};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CLASS_COUNTS_FILE: &str = "class_counts.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const METADATA_FILE: &str = "run_metadata.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

/// Files written by `evaluate`, in a fixed order.
pub const EVAL_BUNDLE: [&str; 6] = [
    "metrics.json",
    "summary_tables.tex",
    "per_class_table.tex",
    "confusion_counts.csv",
    "confusion_normalized.csv",
    METADATA_FILE,
];

/// A split manifest together with the dataset it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub dataset: PathBuf,
    #[serde(flatten)]
    pub split: SplitManifest,
}

impl ManifestFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Input(format!("{}: invalid manifest: {e}", path.display())))
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serialisable") + "\n"
}

/// Parse a FER-2013 CSV file.
pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_fer_csv(BufReader::new(file)).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn manifest_error(path: &Path, source: DatasetError) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct PrepareArgs {
    pub csv: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub train_fraction: TrainFraction,
    pub test_partition: Usage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub manifest: ManifestFile,
    pub manifest_path: PathBuf,
}

fn counts_json(counts: &crate::dataset::ClassCounts) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    for label in EmotionLabel::ALL {
        map.insert(label.name().into(), json!(counts.get(label)));
    }
    map.insert("total".into(), json!(counts.total()));
    serde_json::Value::Object(map)
}

/// Parse, split and write `manifest.json` and `class_counts.json`.
/// Nothing is written when the CSV fails to parse.
pub fn cmd_prepare(args: &PrepareArgs) -> Result<PrepareSummary> {
    let samples = load_dataset(&args.csv)?;
    let split = SplitManifest::build(&samples, args.train_fraction, args.seed, args.test_partition)
        .map_err(|e| manifest_error(&args.csv, e))?;

    let partitions = [Usage::Training, Usage::PublicTest, Usage::PrivateTest];
    let mut by_usage = serde_json::Map::new();
    for usage in partitions {
        let counts = class_counts(samples.iter().filter(|s| s.usage == usage));
        by_usage.insert(usage.as_str().into(), counts_json(&counts));
    }
    let counts = json!({
        "partitions": by_usage,
        "train": counts_json(&class_counts_at(&samples, &split.train_indices)),
        "validation": counts_json(&class_counts_at(&samples, &split.val_indices)),
        "test": counts_json(&class_counts_at(&samples, &split.test_indices)),
    });

    let manifest = ManifestFile {
        dataset: args.csv.clone(),
        split,
    };
    create_dir(&args.out)?;
    let manifest_path = args.out.join(MANIFEST_FILE);
    write_file(&manifest_path, to_json(&manifest))?;
    write_file(&args.out.join(CLASS_COUNTS_FILE), to_json(&counts))?;
    Ok(PrepareSummary {
        manifest,
        manifest_path,
    })
}

/// Result of a completed training run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub checkpoint_digest: String,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

struct BuiltModel {
    model: Box<dyn TrainableModel>,
    warnings: Vec<String>,
}

fn build_model(config: &RunConfig, registry: &AdapterRegistry) -> Result<BuiltModel> {
    let reference = || -> Result<Box<dyn TrainableModel>> {
        Ok(Box::new(reference_model_build(
            config.model.reference_input(),
            config.model.dropout_rate,
        )?))
    };
    match config.model.backend {
        Backend::Reference => Ok(BuiltModel {
            model: reference()?,
            warnings: Vec::new(),
        }),
        Backend::ExternalAdapter => {
            let source = WeightsSource {
                runtime: config.model.adapter_runtime.clone(),
                location: config.model.adapter_weights.clone(),
            };
            match backbone_adapter(registry, &source, config.head_spec()?) {
                Ok(adapted) => Ok(BuiltModel {
                    model: adapted.model,
                    warnings: adapted.budget_warning.into_iter().collect(),
                }),
                Err(ModelError::AdapterUnavailable(msg)) if config.model.fallback_to_reference => {
                    Ok(BuiltModel {
                        model: reference()?,
                        warnings: vec![format!(
                            "adapter unavailable ({msg}); trained the reference backend instead"
                        )],
                    })
                }
                Err(e) => Err(e.into()),
            }
        }
    }
}

fn resolve_split(config: &RunConfig, samples: &[Sample]) -> Result<SplitManifest> {
    let path = &config.data.manifest;
    if path.exists() {
        let file = ManifestFile::load(path)?;
        file.split.verify(samples).map_err(|e| manifest_error(path, e))?;
        return Ok(file.split);
    }
    SplitManifest::build(
        samples,
        config.data.train_fraction,
        config.seed,
        config.data.test_partition,
    )
    .map_err(|e| manifest_error(&config.data.dataset, e))
}

fn weights_json(weights: &ClassWeights, counts: &[usize]) -> serde_json::Value {
    let per_class: Vec<_> = EmotionLabel::ALL
        .iter()
        .map(|l| {
            let i = l.index();
            json!({
                "class": l.name(),
                "train_count": counts[i],
                "weight": weights.weights[i],
                "uncapped": weights.uncapped[i],
            })
        })
        .collect();
    json!({
        "formula": "w_c = min(cap, N / (K * n_c)) over classes present in the training split",
        "cap": weights.cap,
        "per_class": per_class,
    })
}

/// Train per `config`, writing history, checkpoint, metadata and the
/// resolved configuration to `config.output_dir`.
pub fn cmd_train(config: &RunConfig, registry: &AdapterRegistry) -> Result<TrainSummary> {
    config.validate()?;
    let samples = load_dataset(&config.data.dataset)?;
    let split = resolve_split(config, &samples)?;
    let BuiltModel {
        mut model,
        warnings,
    } = build_model(config, registry)?;

    let train_counts = class_counts_at(&samples, &split.train_indices);
    let weights = compute_present_class_weights(train_counts.as_slice(), config.loss.weight_cap);
    let epsilon = config.loss.effective_epsilon();

    let out = &config.output_dir;
    create_dir(out)?;
    write_file(&out.join(RESOLVED_CONFIG_FILE), config.to_toml())?;
    write_file(
        &out.join(MANIFEST_FILE),
        to_json(&ManifestFile {
            dataset: config.data.dataset.clone(),
            split: split.clone(),
        }),
    )?;

    let mut task = SupervisedTask::new(
        &samples,
        &split.train_indices,
        &split.val_indices,
        model.input_spec(),
        model.num_classes(),
        config.batch_size,
        config.seed,
        config.augment.clone(),
        config.loss.clone(),
        weights.clone(),
    )?;
    let history_path = out.join(HISTORY_FILE);
    let file = File::create(&history_path).map_err(|e| Error::io(&history_path, e))?;
    let mut sink = CsvHistoryWriter::new(file).map_err(|e| Error::io(&history_path, e))?;
    let outcome = run_training(
        model.as_mut(),
        &mut task,
        &config.phases,
        &config.callbacks,
        Some(&mut sink),
    )?;

    let best = &outcome.best;
    let checkpoint = Checkpoint {
        meta: CheckpointMeta {
            backend: model.backend_name().to_string(),
            config_digest: config.digest(),
            epoch: best.epoch,
            phase: best.phase.to_string(),
            val_loss: best.val_loss,
            val_acc: best.val_acc,
            head: model.head_spec(),
            input: model.input_spec(),
            epsilon,
        },
        groups: best.groups.clone(),
    };
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let checkpoint_digest = checkpoint.write(&ckpt_path)?;

    let params = count_params(model.as_ref());
    let metadata = json!({
        "backend": model.backend_name(),
        "config_digest": config.digest(),
        "resolved_config": config,
        "manifest_digest": split.digest,
        "split_sizes": {
            "train": split.train_indices.len(),
            "validation": split.val_indices.len(),
            "test": split.test_indices.len(),
        },
        "class_weights": weights_json(&weights, train_counts.as_slice()),
        "label_smoothing": {
            "enabled": config.loss.label_smoothing,
            "effective_epsilon": epsilon,
        },
        "parameters": params,
        "mixed_precision": {
            "requested": config.mixed_precision,
            "honored": false,
        },
        "best_epoch": best.epoch,
        "best_val_acc": best.val_acc,
        "stopped_early": outcome.stopped_early,
        "checkpoint_sha256": checkpoint_digest,
        "decisions": [
            "best checkpoint selected by validation accuracy; ties keep the earlier epoch",
            "early stopping restores the best checkpoint's parameters",
            "plateau counter resets at each phase boundary; early-stop counter does not",
            "learning rate resets to the phase's configured value at each phase start",
            "validation and test loss are unweighted smoothed cross-entropy",
            "normalization parameters stay frozen in both phases",
        ],
        "warnings": warnings,
    });
    write_file(&out.join(METADATA_FILE), to_json(&metadata))?;

    Ok(TrainSummary {
        out_dir: out.clone(),
        checkpoint_digest,
        best_epoch: best.epoch,
        best_val_acc: best.val_acc,
        stopped_early: outcome.stopped_early,
        history: outcome.history,
        warnings,
    })
}

/// Which rows `evaluate` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPartition {
    /// The manifest's test partition.
    Test,
    Validation,
    PublicTest,
    PrivateTest,
}

impl std::str::FromStr for EvalPartition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "test" => Ok(Self::Test),
            "validation" | "val" => Ok(Self::Validation),
            "public-test" | "PublicTest" => Ok(Self::PublicTest),
            "private-test" | "PrivateTest" => Ok(Self::PrivateTest),
            other => Err(format!(
                "unknown partition {other:?}; expected test, validation, public-test or private-test"
            )),
        }
    }
}

impl EvalPartition {
    fn indices(self, manifest: &SplitManifest, samples: &[Sample]) -> Vec<usize> {
        let usage = |u: Usage| {
            samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.usage == u)
                .map(|(i, _)| i)
                .collect()
        };
        match self {
            Self::Test => manifest.test_indices.clone(),
            Self::Validation => manifest.val_indices.clone(),
            Self::PublicTest => usage(Usage::PublicTest),
            Self::PrivateTest => usage(Usage::PrivateTest),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Test => "test",
            Self::Validation => "validation",
            Self::PublicTest => "public-test",
            Self::PrivateTest => "private-test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub partition: EvalPartition,
    pub out: PathBuf,
    /// Overrides the dataset path recorded in the manifest.
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub report: ClassReport,
    pub loss: f64,
    pub rows: usize,
}

/// Rebuild a trainable model from a checkpoint.
pub fn load_checkpoint_model(
    checkpoint: Checkpoint,
    registry: &AdapterRegistry,
) -> Result<Box<dyn TrainableModel>> {
    let meta = checkpoint.meta;
    if meta.backend == REFERENCE_BACKEND {
        return Ok(Box::new(ReferenceModel::from_groups(
            meta.input,
            meta.head,
            checkpoint.groups,
        )?));
    }
    let adapted = backbone_adapter(
        registry,
        &WeightsSource {
            runtime: meta.backend.clone(),
            location: None,
        },
        meta.head,
    )?;
    let mut model = adapted.model;
    let groups = model.groups_mut();
    if groups.len() != checkpoint.groups.len() {
        return Err(ModelError::Shape("checkpoint groups do not match the adapter model".into()).into());
    }
    for (dst, src) in groups.iter_mut().zip(checkpoint.groups) {
        if dst.name != src.name || dst.values.len() != src.values.len() {
            return Err(ModelError::Shape(format!("checkpoint group {:?} does not match", src.name)).into());
        }
        dst.values = src.values;
    }
    Ok(model)
}

/// Score a checkpoint on one partition and write the report bundle.
pub fn cmd_evaluate(args: &EvaluateArgs, registry: &AdapterRegistry) -> Result<EvaluateSummary> {
    let manifest = ManifestFile::load(&args.manifest)?;
    let csv = args.csv.clone().unwrap_or_else(|| manifest.dataset.clone());
    let samples = load_dataset(&csv)?;
    manifest
        .split
        .verify(&samples)
        .map_err(|e| manifest_error(&args.manifest, e))?;

    let checkpoint = Checkpoint::read(&args.checkpoint).map_err(|e| match e {
        crate::checkpoint::CheckpointError::Io(io) => Error::io(&args.checkpoint, io),
        other => other.into(),
    })?;
    let checkpoint_digest = checkpoint.digest()?;
    let meta = checkpoint.meta.clone();
    let model = load_checkpoint_model(checkpoint, registry)?;

    let indices = args.partition.indices(&manifest.split, &samples);
    if indices.is_empty() {
        return Err(Error::Input(format!(
            "partition {} has no rows",
            args.partition.as_str()
        )));
    }
    let inputs = prepare_inputs(&samples, &indices, model.input_spec());
    let labels: Vec<usize> = indices.iter().map(|&i| samples[i].label.index()).collect();
    let eval = evaluate_inputs(model.as_ref(), &inputs, &labels, meta.epsilon);
    let matrix = confusion(&eval.predictions, &labels, NUM_CLASSES)?;
    let rep = report(&matrix)?;
    let params: ParamCount = count_params(model.as_ref());
    let prior = parse_prior_work(DEFAULT_PRIOR_WORK).expect("bundled prior-work table parses");
    let tables = render_tables(
        &rep,
        &RenderMeta {
            model_name: model_display_name(&meta.backend, meta.input),
            loss: Some(eval.loss),
            params,
        },
        &prior,
    );
    let names: Vec<&str> = EmotionLabel::ALL.iter().map(|l| l.name()).collect();

    let per_class: Vec<_> = rep
        .per_class
        .iter()
        .zip(&names)
        .map(|(c, n)| {
            json!({
                "class": n,
                "precision": c.precision,
                "recall": c.recall,
                "f1": c.f1,
                "support": c.support,
            })
        })
        .collect();
    let metrics = json!({
        "partition": args.partition.as_str(),
        "rows": indices.len(),
        "accuracy": rep.accuracy,
        "loss": eval.loss,
        "macro_avg": rep.macro_avg,
        "weighted_avg": rep.weighted_avg,
        "per_class": per_class,
        "confusion": matrix.rows(),
    });
    let metadata = json!({
        "checkpoint": args.checkpoint,
        "checkpoint_sha256": checkpoint_digest,
        "checkpoint_meta": meta,
        "manifest": args.manifest,
        "manifest_digest": manifest.split.digest,
        "dataset": csv,
        "partition": args.partition.as_str(),
        "parameters": params,
        "loss_definition": "mean smoothed cross-entropy without class weights, probabilities floored at 1e-15",
    });

    create_dir(&args.out)?;
    let contents = [
        to_json(&metrics),
        format!("{}\n{}", tables.primary, tables.comparison),
        tables.per_class,
        matrix.to_csv(&names),
        normalized_csv(&normalize_rows(&matrix), &names),
        to_json(&metadata),
    ];
    for (name, body) in EVAL_BUNDLE.iter().zip(contents) {
        write_file(&args.out.join(name), body)?;
    }
    Ok(EvaluateSummary {
        report: rep,
        loss: eval.loss,
        rows: indices.len(),
    })
}

fn model_display_name(backend: &str, input: InputSpec) -> String {
    match (backend, input) {
        (REFERENCE_BACKEND, InputSpec::Flat { downsample }) => {
            format!("Linear softmax ({downsample}x pooled pixels)")
        }
        (REFERENCE_BACKEND, _) => "Linear softmax".to_string(),
        (other, _) => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub epochs: usize,
    pub final_val_acc: f64,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub boundaries: Vec<usize>,
}

/// Turn a history CSV into accuracy and loss curve files plus a summary.
pub fn cmd_report(history: &Path, out: &Path) -> Result<ReportSummary> {
    let text = std::fs::read_to_string(history).map_err(|e| Error::io(history, e))?;
    let records = parse_history_csv(&text).map_err(|source| Error::History {
        path: history.to_path_buf(),
        source,
    })?;
    let curves = export_curves(&records)?;
    let last = records.last().expect("export_curves rejects empty history");
    let best = records
        .iter()
        .fold(&records[0], |b, r| if r.val_acc > b.val_acc { r } else { b });
    let summary = ReportSummary {
        epochs: records.len(),
        final_val_acc: last.val_acc,
        best_val_acc: best.val_acc,
        best_epoch: best.epoch,
        boundaries: phase_boundaries(&records),
    };
    let boundaries: Vec<String> = summary.boundaries.iter().map(usize::to_string).collect();
    let text = format!(
        "epochs: {}\nfinal_val_acc: {}\nbest_val_acc: {}\nbest_epoch: {}\nphase_boundary_after_epoch: {}\n",
        summary.epochs,
        summary.final_val_acc,
        summary.best_val_acc,
        summary.best_epoch,
        if boundaries.is_empty() {
            "none".to_string()
        } else {
            boundaries.join(" ")
        }
    );
    create_dir(out)?;
    write_file(&out.join("accuracy_curve.csv"), curves.accuracy)?;
    write_file(&out.join("loss_curve.csv"), curves.loss)?;
    write_file(&out.join("summary.txt"), text)?;
    Ok(summary)
}

/// Write the default configuration, pointed at `dataset` and `out_dir`.
pub fn cmd_init_config(path: &Path, dataset: Option<PathBuf>, out_dir: Option<PathBuf>) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(d) = dataset {
        config.data.dataset = d;
    }
    if let Some(o) = out_dir {
        config.output_dir = o;
    }
    write_file(path, config.to_toml())?;
    Ok(config)
}

/// Write a synthetic dataset in the FER-2013 CSV format.
pub fn cmd_synth(path: &Path, spec: &SyntheticSpec, official_counts: bool) -> Result<usize> {
    let samples = if official_counts {
        with_official_counts(spec.seed)
    } else {
        separable(spec)
    };
    write_file(path, write_fer_csv(&samples))?;
    Ok(samples.len())
}

/// SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
