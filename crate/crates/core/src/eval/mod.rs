//! Confusion matrices, classification metrics and ROC analysis.

mod report;
mod roc;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use report::{report, Misclassification, MetricReport, ReportConfig};
pub use roc::{multiclass_auc, roc_auc, ClassAuc, MulticlassAuc, RocCurve, RocPoint};

const MODULE: &str = "evaluation";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// `counts[actual][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

/// Count (actual, predicted) pairs over the sorted union of both label sets.
pub fn confusion<S: AsRef<str>>(actual: &[S], predicted: &[S]) -> Result<ConfusionMatrix> {
    let classes: BTreeSet<&str> = actual.iter().chain(predicted).map(AsRef::as_ref).collect();
    confusion_with_classes(actual, predicted, classes.into_iter().map(String::from).collect())
}

/// As [`confusion`] with a fixed class order; labels outside it are added
/// in sorted order after it.
pub fn confusion_with_classes<S: AsRef<str>>(
    actual: &[S],
    predicted: &[S],
    mut classes: Vec<String>,
) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::shape(
            MODULE,
            format!("{} actual labels but {} predictions", actual.len(), predicted.len()),
        ));
    }
    if actual.is_empty() {
        return Err(Error::shape(MODULE, "nothing to evaluate"));
    }
    let extra: BTreeSet<&str> = actual
        .iter()
        .chain(predicted)
        .map(AsRef::as_ref)
        .filter(|l| !classes.iter().any(|c| c == l))
        .collect();
    classes.extend(extra.into_iter().map(String::from));
    let index = |l: &str| classes.iter().position(|c| c == l).expect("class present");
    let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
    for (a, p) in actual.iter().zip(predicted) {
        counts[index(a.as_ref())][index(p.as_ref())] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// One-vs-rest counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    pub accuracy: f64,
    pub fpr: f64,
    pub beta: f64,
    /// Ratios that were 0/0 and reported as 0.
    pub zero_division: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, zero: &mut Vec<String>) -> f64 {
    if den == 0 {
        zero.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F-beta from precision and recall; 0 when both are 0. Equal inputs are
/// returned unchanged so that micro averages agree exactly with accuracy.
pub fn f_beta(p: f64, r: f64, beta: f64) -> f64 {
    if p == r {
        return p;
    }
    let b2 = beta * beta;
    let den = b2 * p + r;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / den
    }
}

impl BinaryCounts {
    pub fn metrics(&self, beta: f64) -> BinaryMetrics {
        let mut zero = Vec::new();
        let precision = ratio(self.tp, self.tp + self.fp, "precision", &mut zero);
        let recall = ratio(self.tp, self.tp + self.fn_, "recall", &mut zero);
        let total = self.tp + self.fp + self.fn_ + self.tn;
        let accuracy = ratio(self.tp + self.tn, total, "accuracy", &mut zero);
        let fpr = ratio(self.fp, self.fp + self.tn, "fpr", &mut zero);
        if precision == 0.0 && recall == 0.0 {
            zero.push("f_beta".into());
        }
        BinaryMetrics { precision, recall, f_beta: f_beta(precision, recall, beta), accuracy, fpr, beta, zero_division: zero }
    }
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    /// Row sum: number of rows whose actual class is `i`.
    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn one_vs_rest(&self, i: usize) -> BinaryCounts {
        let tp = self.counts[i][i];
        let fn_ = self.support(i) - tp;
        let fp = (0..self.n_classes()).map(|a| self.counts[a][i]).sum::<u64>() - tp;
        BinaryCounts { tp, fp, fn_, tn: self.total() - tp - fp - fn_ }
    }

    fn pooled(&self) -> BinaryCounts {
        let mut out = BinaryCounts::default();
        for i in 0..self.n_classes() {
            let c = self.one_vs_rest(i);
            out.tp += c.tp;
            out.fp += c.fp;
            out.fn_ += c.fn_;
            out.tn += c.tn;
        }
        out
    }
}

/// Metrics with `positive` as the positive class; an absent class has all
/// positive counts zero.
pub fn binary_metrics(cm: &ConfusionMatrix, positive: &str, beta: f64) -> BinaryMetrics {
    let counts = match cm.class_index(positive) {
        Some(i) => cm.one_vs_rest(i),
        None => BinaryCounts { tn: cm.total(), ..Default::default() },
    };
    counts.metrics(beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Macro,
    Weighted,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMetric {
    Precision,
    Recall,
    F,
}

fn pick(m: &BinaryMetrics, metric: BaseMetric) -> f64 {
    match metric {
        BaseMetric::Precision => m.precision,
        BaseMetric::Recall => m.recall,
        BaseMetric::F => m.f_beta,
    }
}

/// One-vs-rest per class, then averaged per `mode`.
pub fn aggregate(cm: &ConfusionMatrix, metric: BaseMetric, mode: Averaging, beta: f64) -> f64 {
    let k = cm.n_classes();
    match mode {
        Averaging::Micro => pick(&cm.pooled().metrics(beta), metric),
        Averaging::Macro => (0..k).map(|i| pick(&cm.one_vs_rest(i).metrics(beta), metric)).sum::<f64>() / k as f64,
        Averaging::Weighted => {
            let total = cm.total() as f64;
            (0..k)
                .map(|i| cm.support(i) as f64 / total * pick(&cm.one_vs_rest(i).metrics(beta), metric))
                .sum()
        }
    }
}

/// Scoring functions usable by model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Accuracy,
    Averaged(BaseMetric, Averaging),
}

impl Metric {
    pub const NAMES: [&'static str; 10] = [
        "accuracy",
        "macro_precision",
        "macro_recall",
        "macro_f1",
        "weighted_precision",
        "weighted_recall",
        "weighted_f1",
        "micro_precision",
        "micro_recall",
        "micro_f1",
    ];

    pub fn from_cm(&self, cm: &ConfusionMatrix) -> f64 {
        match *self {
            Metric::Accuracy => cm.accuracy(),
            Metric::Averaged(m, a) => aggregate(cm, m, a, 1.0),
        }
    }

    pub fn score<S: AsRef<str>>(&self, actual: &[S], predicted: &[S]) -> Result<f64> {
        Ok(self.from_cm(&confusion(actual, predicted)?))
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "accuracy" {
            return Ok(Metric::Accuracy);
        }
        let bad = || Error::config(MODULE, format!("unknown metric {s:?}; expected one of {}", Metric::NAMES.join(", ")));
        let (mode, base) = s.split_once('_').ok_or_else(bad)?;
        let mode = match mode {
            "macro" => Averaging::Macro,
            "weighted" => Averaging::Weighted,
            "micro" => Averaging::Micro,
            _ => return Err(bad()),
        };
        let base = match base {
            "precision" => BaseMetric::Precision,
            "recall" => BaseMetric::Recall,
            "f1" => BaseMetric::F,
            _ => return Err(bad()),
        };
        Ok(Metric::Averaged(base, mode))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Accuracy => f.write_str("accuracy"),
            Metric::Averaged(b, a) => {
                let a = match a {
                    Averaging::Macro => "macro",
                    Averaging::Weighted => "weighted",
                    Averaging::Micro => "micro",
                };
                let b = match b {
                    BaseMetric::Precision => "precision",
                    BaseMetric::Recall => "recall",
                    BaseMetric::F => "f1",
                };
                write!(f, "{a}_{b}")
            }
        }
    }
}
