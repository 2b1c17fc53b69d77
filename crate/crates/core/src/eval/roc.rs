use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Rows scoring at least this much are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold", "fpr", "tpr"])?;
        for p in &self.points {
            w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<roc>", e))?;
        Ok(())
    }
}

/// ROC curve with one point per distinct score (descending), starting at
/// (0, 0), and its trapezoidal area.
pub fn roc_auc(scores: &[f64], actual: &[bool]) -> Result<RocCurve> {
    if scores.len() != actual.len() {
        return Err(Error::shape("evaluation", "scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("evaluation", "scores contain NaN"));
    }
    let pos = actual.iter().filter(|&&a| a).count();
    let neg = actual.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC needs at least one positive and one negative row".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if actual[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("starts non-empty");
        let p = RocPoint { threshold: s, fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64 };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAuc {
    pub class: String,
    /// `None` when the class is absent or the only class present.
    pub auc: Option<f64>,
}

/// One-vs-rest AUC per class and their unweighted mean over the classes
/// where it is defined. Multi-class AUC is an extension of the binary
/// definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassAuc {
    pub per_class: Vec<ClassAuc>,
    pub macro_auc: Option<f64>,
}

pub fn multiclass_auc<S: AsRef<str>>(classes: &[String], proba: &[Vec<f64>], actual: &[S]) -> Result<MulticlassAuc> {
    if proba.len() != actual.len() {
        return Err(Error::shape("evaluation", "probabilities and labels differ in length"));
    }
    let mut per_class = Vec::with_capacity(classes.len());
    for (c, class) in classes.iter().enumerate() {
        let scores: Vec<f64> = proba.iter().map(|p| p[c]).collect();
        let truth: Vec<bool> = actual.iter().map(|a| a.as_ref() == class).collect();
        let auc = match roc_auc(&scores, &truth) {
            Ok(r) => Some(r.auc),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        per_class.push(ClassAuc { class: class.clone(), auc });
    }
    let defined: Vec<f64> = per_class.iter().filter_map(|c| c.auc).collect();
    let macro_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(MulticlassAuc { per_class, macro_auc })
}
