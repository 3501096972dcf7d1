//! Run records, their JSON-lines log, and cross-run comparison tables.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ChannelMode, TrainConfig};
use super::folds::FoldPlan;
use crate::error::{Error, Result};
use crate::evaluation::MetricsReport;
use crate::fsutil;

pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub train_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub train_clips: usize,
    pub validation_clips: usize,
    pub epochs: Vec<EpochRecord>,
    /// Final-epoch clip accuracy on the held-out fold.
    pub validation_accuracy: f64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: u32,
    pub config: TrainConfig,
    pub seed: u64,
    pub network: String,
    pub channel_mode: ChannelMode,
    pub mixup: String,
    /// Fixed mixing ratio, 0 when mixup is off, absent for sampled ratios.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub k: usize,
    /// Single fold: training and validation sets coincide.
    pub degenerate: bool,
    pub train_on_all_folds: bool,
    pub folds: Vec<FoldRecord>,
    pub cv_mean: f64,
    #[serde(default)]
    pub evaluation_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<MetricsReport>,
    pub feature_fingerprint: String,
    pub wall_clock_s: f64,
}

impl RunRecord {
    pub fn new(
        config: &TrainConfig,
        plan: &FoldPlan,
        folds: Vec<FoldRecord>,
        train_on_all_folds: bool,
        evaluation: Option<MetricsReport>,
        wall_clock_s: f64,
    ) -> Self {
        let cv_mean = mean_accuracy(&folds);
        Self {
            version: RECORD_VERSION,
            config: config.clone(),
            seed: config.seed,
            network: config.network.clone(),
            channel_mode: config.channel_mode,
            mixup: config.mixup.label(),
            alpha: config.mixup.table_alpha(),
            k: plan.k(),
            degenerate: plan.is_degenerate(),
            train_on_all_folds,
            folds,
            cv_mean,
            evaluation_accuracy: evaluation.as_ref().map(|m| m.overall_accuracy),
            evaluation,
            feature_fingerprint: config.features.fingerprint(),
            wall_clock_s,
        }
    }

    /// Mean of the per-fold validation accuracies.
    pub fn recomputed_cv_mean(&self) -> f64 {
        mean_accuracy(&self.folds)
    }
}

fn mean_accuracy(folds: &[FoldRecord]) -> f64 {
    if folds.is_empty() {
        return f64::NAN;
    }
    folds.iter().map(|f| f.validation_accuracy).sum::<f64>() / folds.len() as f64
}

/// Appends one line to a JSON-lines log, rewriting the file atomically.
pub fn append_record(path: &Path, record: &RunRecord) -> Result<()> {
    let mut text = if path.exists() {
        fsutil::read_to_string(path)?
    } else {
        String::new()
    };
    if !text.is_empty() && !text.ends_with('\n') {
        text.push('\n');
    }
    text.push_str(&serde_json::to_string(record).expect("record serializes"));
    text.push('\n');
    fsutil::write_atomic(path, text.as_bytes())
}

/// Replaces `path` with one JSON line per record.
pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    fsutil::write_atomic(path, text.as_bytes())
}

pub fn parse_records(text: &str, source: &Path) -> Result<Vec<RunRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: RunRecord = serde_json::from_str(l)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", source.display(), i + 1)))?;
            if rec.version != RECORD_VERSION {
                return Err(Error::Parse(format!(
                    "{}:{}: unsupported record version {}",
                    source.display(),
                    i + 1,
                    rec.version
                )));
            }
            Ok(rec)
        })
        .collect()
}

pub fn load_records(path: &Path) -> Result<Vec<RunRecord>> {
    parse_records(&fsutil::read_to_string(path)?, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub network: String,
    pub channel_mode: ChannelMode,
    pub mixup: String,
    pub alpha: Option<f64>,
    pub cv_mean: f64,
    pub fold_accuracies: Vec<f64>,
    pub evaluation_accuracy: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// One row per record, ordered by channel mode, network, then ratio
/// (sampled ratios last).
pub fn compare_runs(records: &[RunRecord]) -> Result<Comparison> {
    if records.is_empty() {
        return Err(Error::Empty("run records"));
    }
    let mut rows: Vec<ComparisonRow> = records
        .iter()
        .map(|r| ComparisonRow {
            method: format!("{} {}", r.channel_mode.label(), r.network),
            network: r.network.clone(),
            channel_mode: r.channel_mode,
            mixup: r.mixup.clone(),
            alpha: r.alpha,
            cv_mean: r.cv_mean,
            fold_accuracies: r.folds.iter().map(|f| f.validation_accuracy).collect(),
            evaluation_accuracy: r.evaluation_accuracy,
            seed: r.seed,
        })
        .collect();
    rows.sort_by(|a, b| {
        a.channel_mode
            .cmp(&b.channel_mode)
            .then_with(|| a.network.cmp(&b.network))
            .then_with(|| match (a.alpha, b.alpha) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            })
            .then_with(|| a.mixup.cmp(&b.mixup))
            .then_with(|| a.seed.cmp(&b.seed))
    });
    Ok(Comparison { rows })
}

fn percent(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

impl Comparison {
    /// Plain-text table with method, ratio, cross-validation and evaluation columns.
    pub fn to_table(&self) -> String {
        let header = ["Method", "α", "Cross-validation", "Evaluation"].map(String::from);
        let body: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.method.clone(),
                    r.alpha.map_or_else(|| r.mixup.clone(), |a| format!("{a}")),
                    percent(r.cv_mean),
                    r.evaluation_accuracy.map_or_else(|| "-".into(), percent),
                ]
            })
            .collect();
        let mut widths = header.clone().map(|h| h.chars().count());
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String; 4]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            format!("| {} |\n", parts.join(" | "))
        };
        let mut out = line(&header);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
        for row in &body {
            out.push_str(&line(row));
        }
        out
    }
}
