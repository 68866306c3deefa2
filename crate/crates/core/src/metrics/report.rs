use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::confusion::{accuracy, confusion_at_threshold, sensitivity, specificity, ConfusionMatrix, Rate};
use super::roc::{align_scores, auc_pair_oracle, auc_trapezoid, roc_curve, RocCurve};
use crate::dataset::Task;
use crate::ensemble::PredictionSet;
use crate::error::{Error, Result};

/// Largest tolerated gap between the trapezoidal and pair-count AUC.
pub const AUC_AGREEMENT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub source: String,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub accuracy: Rate,
    /// Recall per class at the threshold, keyed `positive` / `negative`.
    pub per_class_accuracy: BTreeMap<String, Rate>,
    pub sensitivity: Rate,
    pub specificity: Rate,
    /// `None` when the labels contain a single class.
    pub auc: Option<f64>,
    pub roc: Option<RocCurve>,
}

/// Assembles every metric for one prediction set. The AUC is computed both
/// from the ROC curve and by pair counting; disagreement is an internal error.
pub fn evaluate(pred: &PredictionSet, labels: &BTreeMap<String, bool>, threshold: f64) -> Result<EvalReport> {
    let scores = pred.scores();
    let confusion = confusion_at_threshold(&scores, labels, threshold)?;
    let (s, l) = align_scores(&scores, labels)?;

    let (auc, roc) = if confusion.tp + confusion.fn_ > 0 && confusion.tn + confusion.fp > 0 {
        let curve = roc_curve(&s, &l)?;
        let trapezoid = auc_trapezoid(&curve);
        let oracle = auc_pair_oracle(&s, &l)?;
        if (trapezoid - oracle).abs() > AUC_AGREEMENT_TOLERANCE {
            return Err(Error::Internal(format!(
                "trapezoidal AUC {trapezoid} disagrees with pair-count AUC {oracle}"
            )));
        }
        (Some(trapezoid), Some(curve))
    } else {
        (None, None)
    };

    let sens = sensitivity(&confusion);
    let spec = specificity(&confusion);
    Ok(EvalReport {
        task: pred.task,
        source: pred.source.clone(),
        threshold,
        confusion,
        accuracy: accuracy(&confusion),
        per_class_accuracy: [("positive".to_string(), sens), ("negative".to_string(), spec)]
            .into_iter()
            .collect(),
        sensitivity: sens,
        specificity: spec,
        auc,
        roc,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x}"))
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task:         {}", self.task);
        let _ = writeln!(s, "source:       {}", self.source);
        let _ = writeln!(s, "images:       {}", self.confusion.total());
        let _ = writeln!(s, "threshold:    {}", self.threshold);
        let _ = writeln!(s, "accuracy:     {}", self.accuracy);
        let _ = writeln!(
            s,
            "auc:          {}",
            self.auc.map_or_else(|| "n/a".into(), |a| format!("{a:.6}"))
        );
        let _ = writeln!(s, "sensitivity:  {}", self.sensitivity);
        let _ = writeln!(s, "specificity:  {}", self.specificity);
        for (k, v) in &self.per_class_accuracy {
            let _ = writeln!(s, "class {k:<9} {v}");
        }
        let c = &self.confusion;
        let _ = writeln!(s, "confusion:    tp={} fp={} tn={} fn={}", c.tp, c.fp, c.tn, c.fn_);
        s
    }

    /// Flat `key = value` lines; rates carry full precision, n/a when undefined.
    pub fn to_key_values(&self) -> String {
        let c = &self.confusion;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("task", self.task.to_string());
        kv("source", self.source.clone());
        kv("threshold", self.threshold.to_string());
        kv("images", c.total().to_string());
        kv("tp", c.tp.to_string());
        kv("fp", c.fp.to_string());
        kv("tn", c.tn.to_string());
        kv("fn", c.fn_.to_string());
        kv("accuracy", opt(self.accuracy.value()));
        kv("auc", opt(self.auc));
        kv("sensitivity", opt(self.sensitivity.value()));
        kv("specificity", opt(self.specificity.value()));
        for (k, v) in &self.per_class_accuracy {
            kv(&format!("class_accuracy.{k}"), opt(v.value()));
        }
        s
    }

    /// Writes `report.txt`, `report.kv` and (when defined) `roc.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let w = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(p.display().to_string(), e))
        };
        w("report.txt", self.to_text())?;
        w("report.kv", self.to_key_values())?;
        if let Some(roc) = &self.roc {
            roc.write_csv(&dir.join("roc.csv"))?;
        }
        Ok(())
    }
}
