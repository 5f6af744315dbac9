//! Evaluation artifacts: confusion matrices, per-class reports, rendered
//! LaTeX tables, and learning-curve files.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{EpochRecord, PhaseName};
use crate::dataset::EmotionLabel;
use crate::model::ParamCount;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("predictions ({preds}) and truths ({truths}) differ in length")]
    Length { preds: usize, truths: usize },
    #[error("label {label} at position {position} is outside 0..{k}")]
    LabelRange { position: usize, label: usize, k: usize },
    #[error("confusion matrix is empty")]
    Empty,
    #[error("history is empty")]
    EmptyHistory,
}

/// `K x K` counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let k = rows.len();
        assert!(rows.iter().all(|r| r.len() == k), "confusion matrix must be square");
        Self {
            k,
            counts: rows.concat(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.k).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, pred)).sum()
    }

    /// Comma-separated counts with a header of class names.
    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut out = format!("true\\pred,{}\n", names.join(","));
        for (t, row) in self.rows().iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&format!("{},{}\n", names[t], cells.join(",")));
        }
        out
    }
}

pub fn confusion(preds: &[usize], truths: &[usize], k: usize) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::Length {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    let mut m = ConfusionMatrix::zeros(k);
    for (position, (&p, &t)) in preds.iter().zip(truths).enumerate() {
        for label in [p, t] {
            if label >= k {
                return Err(EvalError::LabelRange { position, label, k });
            }
        }
        m.counts[t * k + p] += 1;
    }
    Ok(m)
}

/// `2PR / (P + R)`, or 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Number of times the class was predicted.
    pub predicted: u64,
}

impl ClassMetrics {
    /// Whether the class occurs among the truths or the predictions.
    pub fn observed(&self) -> bool {
        self.support > 0 || self.predicted > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    /// Unweighted class means.
    pub macro_avg: Averages,
    /// Support-weighted means; rendered as the "Overall" row.
    pub weighted_avg: Averages,
    pub total: u64,
}

impl ClassReport {
    /// Build a report from already-computed per-class values. Macro averages
    /// run over observed classes only.
    pub fn from_per_class(per_class: Vec<ClassMetrics>, accuracy: f64) -> Self {
        let k = per_class.iter().filter(|c| c.observed()).count().max(1) as f64;
        let total: u64 = per_class.iter().map(|c| c.support).sum();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            per_class.iter().filter(|c| c.observed()).map(f).sum::<f64>() / k
        };
        let weighted = |f: fn(&ClassMetrics) -> f64| {
            if total == 0 {
                0.0
            } else {
                per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
            }
        };
        Self {
            macro_avg: Averages {
                precision: mean(|c| c.precision),
                recall: mean(|c| c.recall),
                f1: mean(|c| c.f1),
            },
            weighted_avg: Averages {
                precision: weighted(|c| c.precision),
                recall: weighted(|c| c.recall),
                f1: weighted(|c| c.f1),
            },
            per_class,
            accuracy,
            total,
        }
    }
}

/// Per-class precision, recall and F1. A class that is never predicted has
/// precision 0; a class with no support has recall 0.
pub fn report(matrix: &ConfusionMatrix) -> Result<ClassReport, EvalError> {
    let total = matrix.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let per_class = (0..matrix.k())
        .map(|c| {
            let tp = matrix.get(c, c);
            let precision = ratio(tp, matrix.col_sum(c));
            let recall = ratio(tp, matrix.row_sum(c));
            ClassMetrics {
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: matrix.row_sum(c),
                predicted: matrix.col_sum(c),
            }
        })
        .collect();
    Ok(ClassReport::from_per_class(
        per_class,
        matrix.trace() as f64 / total as f64,
    ))
}

/// Rows divided by their sums; empty rows stay zero.
pub fn normalize_rows(matrix: &ConfusionMatrix) -> Vec<Vec<f64>> {
    matrix
        .rows()
        .into_iter()
        .map(|row| {
            let s: u64 = row.iter().sum();
            row.iter()
                .map(|&v| if s == 0 { 0.0 } else { v as f64 / s as f64 })
                .collect()
        })
        .collect()
}

pub fn normalized_csv(rows: &[Vec<f64>], names: &[&str]) -> String {
    let mut out = format!("true\\pred,{}\n", names.join(","));
    for (t, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&format!("{},{}\n", names[t], cells.join(",")));
    }
    out
}

/// Round half away from zero at `decimals` places and format with exactly
/// that many digits.
pub fn format_half_up(x: f64, decimals: usize) -> String {
    let scale = 10f64.powi(decimals as i32);
    // Snap values within float noise of a representable decimal so that
    // e.g. 0.685 rounds up as written.
    let scaled = x * scale;
    let snapped = (scaled * 1e6).round() / 1e6;
    let rounded = if snapped >= 0.0 {
        (snapped + 0.5).floor()
    } else {
        -((-snapped) + 0.5).floor()
    };
    format!("{:.*}", decimals, rounded / scale)
}

/// A cited result, stored as printed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorWork {
    pub model: String,
    pub accuracy: String,
    pub params_m: String,
    pub source: String,
}

#[derive(Debug, Clone, Deserialize)]
struct PriorWorkFile {
    #[serde(default)]
    prior: Vec<PriorWork>,
}

pub const DEFAULT_PRIOR_WORK: &str = include_str!("../data/prior_work.toml");

pub fn parse_prior_work(text: &str) -> Result<Vec<PriorWork>, toml::de::Error> {
    Ok(toml::from_str::<PriorWorkFile>(text)?.prior)
}

/// Run-level values rendered next to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderMeta {
    pub model_name: String,
    pub loss: Option<f64>,
    pub params: ParamCount,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTables {
    pub primary: String,
    pub per_class: String,
    pub comparison: String,
}

fn with_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn millions(n: usize) -> String {
    let m = n as f64 / 1e6;
    if m >= 1.0 {
        format_half_up(m, 1)
    } else {
        format_half_up(m, 3)
    }
}

pub fn per_class_row(name: &str, precision: f64, recall: f64, f1: f64) -> String {
    format!(
        "{name} & {} & {} & {} \\\\",
        format_half_up(precision, 2),
        format_half_up(recall, 2),
        format_half_up(f1, 2)
    )
}

pub fn render_tables(report: &ClassReport, meta: &RenderMeta, prior: &[PriorWork]) -> RenderedTables {
    let accuracy_pct = format!("{}\\%", format_half_up(report.accuracy * 100.0, 2));
    let loss = meta
        .loss
        .map(|l| format_half_up(l, 4))
        .unwrap_or_else(|| "n/a".to_string());
    let params = if meta.params.trainable == meta.params.total {
        with_thousands(meta.params.total)
    } else {
        format!(
            "{} ({} trainable)",
            with_thousands(meta.params.total),
            with_thousands(meta.params.trainable)
        )
    };
    let primary = [
        "\\begin{tabular}{lc}".to_string(),
        "\\toprule".into(),
        "Metric & Value \\\\".into(),
        "\\midrule".into(),
        format!("Test accuracy & {accuracy_pct} \\\\"),
        format!("Test loss (best checkpoint) & {loss} \\\\"),
        format!("Number of parameters & {params} \\\\"),
        "\\bottomrule".into(),
        "\\end{tabular}".into(),
    ]
    .join("\n")
        + "\n";

    let mut per_class = vec![
        "\\begin{tabular}{lccc}".to_string(),
        "\\toprule".into(),
        "Class & Precision & Recall & F1 \\\\".into(),
        "\\midrule".into(),
    ];
    for (i, c) in report.per_class.iter().enumerate() {
        let name = EmotionLabel::from_index(i)
            .map(|l| l.title().to_string())
            .unwrap_or_else(|| format!("Class {i}"));
        per_class.push(per_class_row(&name, c.precision, c.recall, c.f1));
    }
    per_class.push("\\midrule".into());
    let w = &report.weighted_avg;
    per_class.push(per_class_row("Overall", w.precision, w.recall, w.f1));
    per_class.push("\\bottomrule".into());
    per_class.push("\\end{tabular}".into());
    let per_class = per_class.join("\n") + "\n";

    let mut comparison = vec![
        "\\begin{tabular}{lccc}".to_string(),
        "\\toprule".into(),
        "Model & Accuracy (\\%) & Params (M) & Source \\\\".into(),
        "\\midrule".into(),
    ];
    for p in prior {
        comparison.push(format!(
            "{} & {} & {} & {} \\\\",
            p.model, p.accuracy, p.params_m, p.source
        ));
    }
    comparison.push(format!(
        "\\textbf{{{}}} & \\textbf{{{}}} & \\textbf{{{}}} & this run \\\\",
        meta.model_name,
        format_half_up(report.accuracy * 100.0, 2),
        millions(meta.params.total)
    ));
    comparison.push("\\bottomrule".into());
    comparison.push("\\end{tabular}".into());
    let comparison = comparison.join("\n") + "\n";

    RenderedTables {
        primary,
        per_class,
        comparison,
    }
}

/// Accuracy and loss curve files, each `epoch,train,validation`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFiles {
    pub accuracy: String,
    pub loss: String,
}

/// Epochs after which the phase changes.
pub fn phase_boundaries(history: &[EpochRecord]) -> Vec<usize> {
    history
        .windows(2)
        .filter(|w| w[0].phase != w[1].phase)
        .map(|w| w[0].epoch)
        .collect()
}

fn phase_annotation(history: &[EpochRecord]) -> String {
    let mut spans: Vec<(PhaseName, usize, usize)> = Vec::new();
    for r in history {
        match spans.last_mut() {
            Some((p, _, end)) if *p == r.phase => *end = r.epoch,
            _ => spans.push((r.phase, r.epoch, r.epoch)),
        }
    }
    let spans: Vec<String> = spans
        .iter()
        .map(|(p, a, b)| format!("{p} {a}-{b}"))
        .collect();
    let boundaries: Vec<String> = phase_boundaries(history).iter().map(usize::to_string).collect();
    format!(
        "# phases: {}; boundary_after_epoch: {}",
        spans.join(", "),
        if boundaries.is_empty() {
            "none".to_string()
        } else {
            boundaries.join(" ")
        }
    )
}

pub fn export_curves(history: &[EpochRecord]) -> Result<CurveFiles, EvalError> {
    if history.is_empty() {
        return Err(EvalError::EmptyHistory);
    }
    let note = phase_annotation(history);
    let build = |train: fn(&EpochRecord) -> f64, val: fn(&EpochRecord) -> f64| {
        let mut out = format!("{note}\nepoch,train,validation\n");
        for r in history {
            out.push_str(&format!("{},{},{}\n", r.epoch, train(r), val(r)));
        }
        out
    };
    Ok(CurveFiles {
        accuracy: build(|r| r.train_acc, |r| r.val_acc),
        loss: build(|r| r.train_loss, |r| r.val_loss),
    })
}

/// Data rows of a curve file as `(epoch, train, validation)`.
pub fn parse_curve(text: &str) -> Option<Vec<(usize, f64, f64)>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("epoch,") && !l.is_empty())
        .map(|l| {
            let mut f = l.split(',');
            Some((
                f.next()?.parse().ok()?,
                f.next()?.parse().ok()?,
                f.next()?.parse().ok()?,
            ))
        })
        .collect()
}
