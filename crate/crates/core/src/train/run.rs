use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::LabeledSet;
use super::schedule::{lr_at_epoch, TrainingSchedule};
use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::metrics::{auc_trapezoid, roc_curve};
use crate::nn::{build_model, BackboneSpec, Batch, ModelState, SgdConfig};
use crate::raster::RasterImage;
use crate::seed;

pub const METRICS_HEADER: &str = "epoch,train_loss,val_accuracy,val_auc";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_accuracy: f64,
    /// `None` when the validation set holds a single class.
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    #[default]
    ValAccuracy,
    ValAuc,
}

impl SelectionCriterion {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionCriterion::ValAccuracy => "val_accuracy",
            SelectionCriterion::ValAuc => "val_auc",
        }
    }

    fn value(self, m: &EpochMetrics) -> f64 {
        match self {
            SelectionCriterion::ValAccuracy => m.val_accuracy,
            SelectionCriterion::ValAuc => m.val_auc.unwrap_or(f64::NEG_INFINITY),
        }
    }
}

impl fmt::Display for SelectionCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val_accuracy" => Ok(SelectionCriterion::ValAccuracy),
            "val_auc" => Ok(SelectionCriterion::ValAuc),
            other => Err(Error::InvalidArgument(format!("unknown selection criterion {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub task: Task,
    pub spec: BackboneSpec,
    pub schedule: TrainingSchedule,
    pub seed: u64,
    pub criterion: SelectionCriterion,
    pub metrics: Vec<EpochMetrics>,
    pub selected_epoch: u32,
    /// One per epoch when the run has a directory, otherwise empty.
    pub checkpoints: Vec<PathBuf>,
}

impl RunRecord {
    pub fn selected_checkpoint(&self) -> Option<&Path> {
        self.checkpoints.get(self.selected_epoch as usize).map(PathBuf::as_path)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub run_id: String,
    pub task: Task,
    /// `runs/{run_id}`; checkpoints and metrics.csv go here. `None` keeps
    /// everything in memory.
    pub run_dir: Option<PathBuf>,
    pub criterion: SelectionCriterion,
}

pub struct TrainOutcome {
    pub record: RunRecord,
    /// Weights from the selected epoch.
    pub best: ModelState,
}

/// Argmax of the criterion; the earliest epoch wins ties.
pub fn select_best_checkpoint(metrics: &[EpochMetrics], criterion: SelectionCriterion) -> Result<u32> {
    let mut best: Option<&EpochMetrics> = None;
    for m in metrics {
        if best.is_none_or(|b| criterion.value(m) > criterion.value(b)) {
            best = Some(m);
        }
    }
    best.map(|m| m.epoch)
        .ok_or_else(|| Error::InvalidArgument("no epoch metrics to select from".into()))
}

fn fmt_metric_row(m: &EpochMetrics) -> String {
    let auc = m.val_auc.map_or_else(|| "n/a".to_string(), |a| a.to_string());
    format!("{},{},{},{}\n", m.epoch, m.train_loss, m.val_accuracy, auc)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        message,
    };
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => return Err(perr(1, format!("expected header {METRICS_HEADER}"))),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(perr(i + 1, format!("expected 4 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| perr(i + 1, format!("{s:?}: {e}")));
            Ok(EpochMetrics {
                epoch: f[0].parse().map_err(|e| perr(i + 1, format!("{:?}: {e}", f[0])))?,
                train_loss: num(f[1])?,
                val_accuracy: num(f[2])?,
                val_auc: if f[3] == "n/a" { None } else { Some(num(f[3])?) },
            })
        })
        .collect()
}

fn validate_metrics(model: &ModelState, val: &[RasterImage], labels: &[usize]) -> Result<(f64, Option<f64>)> {
    let outputs = model.forward_softmax(val)?;
    let scores: Vec<f64> = outputs.iter().map(|o| o.positive()).collect();
    let truth: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    let correct = scores.iter().zip(&truth).filter(|(s, t)| (**s >= 0.5) == **t).count();
    let accuracy = correct as f64 / scores.len() as f64;
    let auc = roc_curve(&scores, &truth).ok().map(|c| auc_trapezoid(&c));
    Ok((accuracy, auc))
}

/// Runs the full schedule: shuffled mini-batches each epoch (random crops
/// when the backbone asks for them), validation after every epoch, and a
/// checkpoint per epoch when a run directory is given. Deterministic in
/// `seed`.
pub fn train(
    spec: &BackboneSpec,
    schedule: &TrainingSchedule,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    seed: u64,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    spec.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    if let Some(l) = train_set.labels.iter().chain(&val_set.labels).find(|l| **l >= spec.num_classes) {
        return Err(Error::InvalidArgument(format!("label {l} out of range for {} classes", spec.num_classes)));
    }

    let ckpt_dir = opts.run_dir.as_ref().map(|d| d.join("checkpoints"));
    if let Some(dir) = &ckpt_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let mut metrics_file = match &opts.run_dir {
        Some(dir) => {
            let path = dir.join("metrics.csv");
            let mut f = fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(path.display().to_string(), e))?;
            Some((f, path))
        }
        None => None,
    };

    let val_images = val_set
        .images
        .par_iter()
        .map(|img| spec.crop_eval(img))
        .collect::<Result<Vec<_>>>()?;

    let mut model = build_model(spec, seed)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::with_capacity(schedule.total_epochs as usize);
    let mut checkpoints = Vec::new();
    let mut best: Option<(f64, ModelState)> = None;

    for epoch in 0..schedule.total_epochs {
        let opt = SgdConfig {
            lr: lr_at_epoch(schedule, epoch)?,
            momentum: schedule.momentum,
            weight_decay: schedule.weight_decay,
        };
        model.shuffle(&mut order);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(schedule.batch_size) {
            let crop_seeds: Vec<u64> = chunk.iter().map(|_| model.next_u64()).collect();
            let views = chunk
                .par_iter()
                .zip(&crop_seeds)
                .map(|(&i, &s)| spec.crop_train(&train_set.images[i], &mut seed::rng_from(s)))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&RasterImage> = views.iter().collect();
            let batch = Batch::from_images(
                chunk.iter().map(|&i| train_set.ids[i].clone()).collect(),
                &refs,
                chunk.iter().map(|&i| train_set.labels[i]).collect(),
            )?;
            let loss = model.sgd_step(&batch, &opt).map_err(|e| match e {
                Error::NonFiniteLoss { loss, lr, batch_ids, .. } => Error::NonFiniteLoss {
                    loss,
                    lr,
                    batch_ids,
                    epoch: Some(epoch),
                },
                other => other,
            })?;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        model.epoch = epoch + 1;

        let (val_accuracy, val_auc) = validate_metrics(&model, &val_images, &val_set.labels)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_accuracy,
            val_auc,
        };
        log::info!(
            "{} epoch {epoch}: lr {} loss {:.5} val_acc {:.4} val_auc {}",
            opts.run_id,
            opt.lr,
            m.train_loss,
            m.val_accuracy,
            m.val_auc.map_or("n/a".into(), |a| format!("{a:.4}"))
        );
        if let Some((f, path)) = &mut metrics_file {
            f.write_all(fmt_metric_row(&m).as_bytes())
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        if let Some(dir) = &ckpt_dir {
            let path = dir.join(format!("epoch_{epoch}.ckpt"));
            model.save_checkpoint(&path)?;
            checkpoints.push(path);
        }
        let score = opts.criterion.value(&m);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, model.clone()));
        }
        metrics.push(m);
    }

    let selected_epoch = select_best_checkpoint(&metrics, opts.criterion)?;
    let record = RunRecord {
        run_id: opts.run_id.clone(),
        task: opts.task,
        spec: spec.clone(),
        schedule: schedule.clone(),
        seed,
        criterion: opts.criterion,
        metrics,
        selected_epoch,
        checkpoints,
    };
    if let Some(dir) = &opts.run_dir {
        let path = dir.join("run.json");
        fs::write(&path, serde_json::to_string_pretty(&record)?)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    let best = best.expect("at least one epoch").1;
    Ok(TrainOutcome { record, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(epoch: u32, acc: f64) -> EpochMetrics {
        EpochMetrics {
            epoch,
            train_loss: 0.0,
            val_accuracy: acc,
            val_auc: Some(acc),
        }
    }

    #[test]
    fn argmax_prefers_earliest() {
        let ms = [m(0, 0.7), m(1, 0.9), m(2, 0.9)];
        assert_eq!(select_best_checkpoint(&ms, SelectionCriterion::ValAccuracy).unwrap(), 1);
    }

    #[test]
    fn increasing_picks_last() {
        let ms: Vec<_> = (0..72).map(|e| m(e, e as f64 / 100.0)).collect();
        assert_eq!(select_best_checkpoint(&ms, SelectionCriterion::ValAuc).unwrap(), 71);
    }

    #[test]
    fn single_and_empty() {
        assert_eq!(select_best_checkpoint(&[m(0, 0.1)], SelectionCriterion::ValAccuracy).unwrap(), 0);
        assert!(select_best_checkpoint(&[], SelectionCriterion::ValAccuracy).is_err());
    }
}
