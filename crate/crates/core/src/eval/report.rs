use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{aggregate, Averaging, BaseMetric, ConfusionMatrix, MulticlassAuc};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub beta: f64,
    pub top_n: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { beta: 1.0, top_n: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Misclassification {
    pub actual: String,
    pub predicted: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub beta: f64,
    pub rows: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub micro_avg: Averages,
    /// Ratios that were 0/0 and reported as 0, as `class:metric`.
    pub zero_division: Vec<String>,
    pub top_misclassifications: Vec<Misclassification>,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc_ovr: Option<MulticlassAuc>,
}

fn averages(cm: &ConfusionMatrix, mode: Averaging, beta: f64) -> Averages {
    Averages {
        precision: aggregate(cm, BaseMetric::Precision, mode, beta),
        recall: aggregate(cm, BaseMetric::Recall, mode, beta),
        f_beta: aggregate(cm, BaseMetric::F, mode, beta),
    }
}

/// Largest off-diagonal cells, ties in class order.
pub fn top_misclassifications(cm: &ConfusionMatrix, n: usize) -> Vec<Misclassification> {
    let mut cells: Vec<(u64, usize, usize)> = Vec::new();
    for a in 0..cm.n_classes() {
        for p in 0..cm.n_classes() {
            if a != p && cm.counts[a][p] > 0 {
                cells.push((cm.counts[a][p], a, p));
            }
        }
    }
    cells.sort_by(|x, y| y.0.cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    cells
        .into_iter()
        .take(n)
        .map(|(count, a, p)| Misclassification { actual: cm.classes[a].clone(), predicted: cm.classes[p].clone(), count })
        .collect()
}

pub fn report(cm: &ConfusionMatrix, cfg: &ReportConfig) -> MetricReport {
    let mut zero_division = Vec::new();
    let per_class = (0..cm.n_classes())
        .map(|i| {
            let m = cm.one_vs_rest(i).metrics(cfg.beta);
            zero_division.extend(
                m.zero_division.iter().filter(|z| *z != "accuracy").map(|z| format!("{}:{z}", cm.classes[i])),
            );
            ClassMetrics {
                class: cm.classes[i].clone(),
                precision: m.precision,
                recall: m.recall,
                f_beta: m.f_beta,
                support: cm.support(i),
            }
        })
        .collect();
    MetricReport {
        beta: cfg.beta,
        rows: cm.total(),
        accuracy: cm.accuracy(),
        per_class,
        macro_avg: averages(cm, Averaging::Macro, cfg.beta),
        weighted_avg: averages(cm, Averaging::Weighted, cfg.beta),
        micro_avg: averages(cm, Averaging::Micro, cfg.beta),
        zero_division,
        top_misclassifications: top_misclassifications(cm, cfg.top_n),
        confusion: cm.clone(),
        auc_ovr: None,
    }
}

impl MetricReport {
    pub fn with_auc(mut self, auc: MulticlassAuc) -> Self {
        self.auc_ovr = Some(auc);
        self
    }

    fn f_name(&self) -> String {
        if self.beta == 1.0 {
            "f1".into()
        } else {
            format!("f{}", self.beta)
        }
    }

    pub fn render_text(&self) -> String {
        let f = self.f_name();
        let mut s = String::new();
        let _ = writeln!(s, "rows: {}", self.rows);
        let _ = writeln!(s, "accuracy: {:.6}", self.accuracy);
        let _ = writeln!(s);
        let width = self.per_class.iter().map(|c| c.class.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "class", "precision", "recall", f, "support");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.6}  {:>9.6}  {:>9.6}  {:>7}",
                c.class, c.precision, c.recall, c.f_beta, c.support
            );
        }
        let _ = writeln!(s);
        for (name, a) in [("macro", &self.macro_avg), ("weighted", &self.weighted_avg), ("micro", &self.micro_avg)] {
            let _ = writeln!(
                s,
                "{name}-precision: {:.6}  {name}-recall: {:.6}  {name}-{f}: {:.6}",
                a.precision, a.recall, a.f_beta
            );
        }
        if let Some(auc) = &self.auc_ovr {
            let _ = writeln!(s);
            let _ = writeln!(s, "one-vs-rest AUC (multi-class extension):");
            for c in &auc.per_class {
                match c.auc {
                    Some(v) => {
                        let _ = writeln!(s, "  {}: {v:.6}", c.class);
                    }
                    None => {
                        let _ = writeln!(s, "  {}: undefined", c.class);
                    }
                }
            }
            if let Some(m) = auc.macro_auc {
                let _ = writeln!(s, "  macro: {m:.6}");
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "confusion matrix (rows actual, columns predicted):");
        let _ = writeln!(s, "{:<width$}  {}", "", self.confusion.classes.join("  "));
        for (i, row) in self.confusion.counts.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&self.confusion.classes)
                .map(|(v, c)| format!("{v:>w$}", w = c.len()))
                .collect();
            let _ = writeln!(s, "{:<width$}  {}", self.confusion.classes[i], cells.join("  "));
        }
        if !self.top_misclassifications.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "top misclassifications:");
            for m in &self.top_misclassifications {
                let _ = writeln!(s, "  {} -> {}: {}", m.actual, m.predicted, m.count);
            }
        }
        if !self.zero_division.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "0/0 reported as 0: {}", self.zero_division.join(", "));
        }
        s
    }

    /// `section,class,metric,value` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let f = self.f_name();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["section", "class", "metric", "value"])?;
        let mut row = |sec: &str, class: &str, metric: &str, value: String| w.write_record([sec, class, metric, &value]);
        row("summary", "", "rows", self.rows.to_string())?;
        row("summary", "", "accuracy", self.accuracy.to_string())?;
        for c in &self.per_class {
            row("class", &c.class, "precision", c.precision.to_string())?;
            row("class", &c.class, "recall", c.recall.to_string())?;
            row("class", &c.class, &f, c.f_beta.to_string())?;
            row("class", &c.class, "support", c.support.to_string())?;
        }
        for (name, a) in [("macro", &self.macro_avg), ("weighted", &self.weighted_avg), ("micro", &self.micro_avg)] {
            row(name, "", "precision", a.precision.to_string())?;
            row(name, "", "recall", a.recall.to_string())?;
            row(name, "", &f, a.f_beta.to_string())?;
        }
        if let Some(auc) = &self.auc_ovr {
            for c in &auc.per_class {
                row("auc_ovr_extension", &c.class, "auc", c.auc.map_or(String::new(), |v| v.to_string()))?;
            }
            if let Some(m) = auc.macro_auc {
                row("auc_ovr_extension", "", "macro_auc", m.to_string())?;
            }
        }
        for m in &self.top_misclassifications {
            row("misclassification", &m.actual, &format!("predicted:{}", m.predicted), m.count.to_string())?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))?;
        Ok(())
    }

    pub fn write_confusion_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["actual".to_string()];
        header.extend(self.confusion.classes.iter().cloned());
        w.write_record(&header)?;
        for (i, row) in self.confusion.counts.iter().enumerate() {
            let mut rec = vec![self.confusion.classes[i].clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<confusion>", e))?;
        Ok(())
    }
}
