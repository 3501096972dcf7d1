//! Patch-to-clip aggregation and classification metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio_io::SceneClass;
use crate::error::{Error, Result};

/// How per-patch probability vectors become one clip label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Per-class maximum over patches, then argmax.
    #[default]
    Max,
    Mean,
    /// Per-class median (midpoint of the two central values for even counts).
    Median,
    /// One vote per patch for its argmax class.
    Majority,
    /// The single highest patch probability decides.
    MaxPatchArgmax,
}

impl Aggregation {
    pub const ALL: [Aggregation; 5] = [
        Aggregation::Max,
        Aggregation::Mean,
        Aggregation::Median,
        Aggregation::Majority,
        Aggregation::MaxPatchArgmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Max => "max",
            Aggregation::Mean => "mean",
            Aggregation::Median => "median",
            Aggregation::Majority => "majority",
            Aggregation::MaxPatchArgmax => "max-patch-argmax",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown aggregation strategy {s:?}")))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn median(mut column: Vec<f64>) -> f64 {
    column.sort_by(f64::total_cmp);
    let n = column.len();
    if n % 2 == 1 {
        column[n / 2]
    } else {
        0.5 * (column[n / 2 - 1] + column[n / 2])
    }
}

/// Combines patch probabilities into `(label, scores)`.
///
/// Scores are the per-class statistic the label is the argmax of; for
/// majority they are vote fractions and for max-patch-argmax the winning
/// patch's vector.
pub fn aggregate_clip<P: AsRef<[f64]>>(
    patch_probs: &[P],
    strategy: Aggregation,
) -> Result<(usize, Vec<f64>)> {
    let first = patch_probs
        .first()
        .ok_or(Error::Empty("clip has no patches"))?
        .as_ref();
    let k = first.len();
    if k == 0 || patch_probs.iter().any(|p| p.as_ref().len() != k) {
        return Err(Error::shape(
            "patch probabilities",
            k,
            "ragged or empty vectors",
        ));
    }
    let n = patch_probs.len() as f64;
    let column = |c: usize| patch_probs.iter().map(move |p| p.as_ref()[c]);
    let scores: Vec<f64> = match strategy {
        Aggregation::Max => (0..k)
            .map(|c| column(c).fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        Aggregation::Mean => (0..k).map(|c| column(c).sum::<f64>() / n).collect(),
        Aggregation::Median => (0..k).map(|c| median(column(c).collect())).collect(),
        Aggregation::Majority => {
            let mut votes = vec![0.0; k];
            for p in patch_probs {
                votes[argmax(p.as_ref())] += 1.0;
            }
            votes.iter().map(|v| v / n).collect()
        }
        Aggregation::MaxPatchArgmax => {
            // the patch holding the global maximum; earliest patch on ties
            let mut best = (0, argmax(first));
            for (i, p) in patch_probs.iter().enumerate().skip(1) {
                let p = p.as_ref();
                let c = argmax(p);
                let cur = patch_probs[best.0].as_ref()[best.1];
                if p[c] > cur || (p[c] == cur && c < best.1) {
                    best = (i, c);
                }
            }
            return Ok((best.1, patch_probs[best.0].as_ref().to_vec()));
        }
    };
    Ok((argmax(&scores), scores))
}

/// Prediction for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub clip: String,
    pub true_class: Option<SceneClass>,
    pub predicted: SceneClass,
    pub strategy: Aggregation,
    pub scores: Vec<f64>,
    pub patch_probabilities: Vec<Vec<f64>>,
}

impl ClipPrediction {
    pub fn new(
        clip: String,
        true_class: Option<SceneClass>,
        patch_probabilities: Vec<Vec<f64>>,
        strategy: Aggregation,
    ) -> Result<Self> {
        let (label, scores) = aggregate_clip(&patch_probabilities, strategy)?;
        let predicted = SceneClass::from_id(label)
            .ok_or_else(|| Error::shape("class scores", "15 classes", scores.len()))?;
        Ok(Self {
            clip,
            true_class,
            predicted,
            strategy,
            scores,
            patch_probabilities,
        })
    }

    /// Tab-separated: clip, true class, predicted class, strategy, scores.
    pub fn tsv_row(&self) -> String {
        let mut row = format!(
            "{}\t{}\t{}\t{}",
            self.clip,
            self.true_class.map_or("-", SceneClass::name),
            self.predicted.name(),
            self.strategy
        );
        for s in &self.scores {
            row.push_str(&format!("\t{s:.6}"));
        }
        row
    }

    pub fn tsv_header() -> String {
        let mut h = String::from("clip\ttrue_class\tpredicted_class\tstrategy");
        for c in SceneClass::ALL {
            h.push('\t');
            h.push_str(c.name());
        }
        h
    }
}

/// Accuracy and confusion over clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_classes: usize,
    pub overall_accuracy: f64,
    /// `None` for classes with no clips.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn from_pairs(
        n_classes: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut confusion = vec![vec![0u64; n_classes]; n_classes];
        for (t, p) in pairs {
            if t >= n_classes || p >= n_classes {
                return Err(Error::shape("confusion entry", n_classes, (t, p)));
            }
            confusion[t][p] += 1;
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Empty("no clips to score"));
        }
        let trace: u64 = (0..n_classes).map(|i| confusion[i][i]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect();
        Ok(Self {
            n_classes,
            overall_accuracy: trace as f64 / total as f64,
            per_class_accuracy,
            confusion,
        })
    }

    pub fn from_predictions(predictions: &[ClipPrediction]) -> Result<Self> {
        let pairs = predictions
            .iter()
            .map(|p| {
                p.true_class
                    .map(|t| (t.id(), p.predicted.id()))
                    .ok_or_else(|| Error::Config(format!("clip {} has no reference label", p.clip)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(crate::audio_io::NUM_CLASSES, pairs)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes).map(|i| self.confusion[i][i]).sum()
    }

    pub fn class_counts(&self) -> Vec<u64> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }

    /// Human-readable summary with per-class accuracy and the confusion matrix.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "accuracy {:.4} ({}/{})\n\n{:<18} {:>6} {:>8}\n",
            self.overall_accuracy,
            self.correct(),
            self.total(),
            "class",
            "clips",
            "accuracy"
        );
        let counts = self.class_counts();
        for (i, (count, accuracy)) in counts.iter().zip(&self.per_class_accuracy).enumerate() {
            let name =
                SceneClass::from_id(i).map_or_else(|| i.to_string(), |c| c.name().to_string());
            let acc = accuracy.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
            s.push_str(&format!("{name:<18} {count:>6} {acc:>8}\n"));
        }
        s.push_str("\nconfusion (rows: true, columns: predicted)\n");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>3}")).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s
    }
}
