use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use crate::augment::expand_dataset;
use crate::dataset::{derive_task_manifest, load_manifest, stratified_split, DatasetManifest};
use crate::ensemble::{ensemble_mean, predict_dataset, PredictionSet};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::seed;
use crate::train::{train, LabeledSet, RunRecord, TrainOptions};

pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const FAILED_MARKER: &str = "FAILED";

#[derive(Debug, Clone, Copy, Default)]
pub struct PipelineOptions {
    /// Replace an existing non-empty experiment directory.
    pub overwrite: bool,
    /// Stop once every model is trained (no prediction or report).
    pub train_only: bool,
}

pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub runs: Vec<RunRecord>,
    pub predictions: Vec<PredictionSet>,
    pub fused: Option<PredictionSet>,
    pub report: Option<EvalReport>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path.display().to_string(), e)
}

/// Creates `dir`, refusing to reuse a non-empty one unless `overwrite`.
pub fn prepare_output_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(io_err(dir))?.next().is_some();
        if non_empty {
            if !overwrite {
                return Err(Error::OutputExists(dir.to_path_buf()));
            }
            fs::remove_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Runs `body`; on failure leaves a `FAILED` marker holding the error.
pub fn with_failure_marker<T>(dir: &Path, body: impl FnOnce() -> Result<T>) -> Result<T> {
    let out = body();
    if let Err(e) = &out {
        let _ = fs::create_dir_all(dir);
        let _ = fs::write(dir.join(FAILED_MARKER), format!("{e}\n"));
    }
    out
}

fn load_checked(manifest: &Path, image_root: &Path, ext: &str) -> Result<DatasetManifest> {
    let load = load_manifest(manifest, image_root, ext)?;
    if let Some(first) = load.missing_images.first() {
        return Err(Error::Validation(format!(
            "{} images listed in {} are missing (first: {})",
            load.missing_images.len(),
            manifest.display(),
            first.display()
        )));
    }
    Ok(load.manifest)
}

/// split -> augment -> train every model -> predict -> fuse -> evaluate,
/// everything under `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: PipelineOptions) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    prepare_output_dir(&dir, opts.overwrite)?;
    cfg.save(&dir.join(SNAPSHOT_FILE))?;
    with_failure_marker(&dir, || run_stages(cfg, &dir, opts))
}

fn run_stages(cfg: &ExperimentConfig, dir: &Path, opts: PipelineOptions) -> Result<ExperimentOutcome> {
    let full = load_checked(&cfg.data.manifest, &cfg.data.image_root, &cfg.data.image_ext)?;
    let split_dir = dir.join("split");

    let (development, held_out) = match (&cfg.data.test_manifest, &cfg.data.test_image_root) {
        (Some(m), Some(root)) => (full, Some(load_checked(m, root, &cfg.data.image_ext)?)),
        _ => match cfg.data.holdout_fraction {
            Some(h) => {
                let s = stratified_split(&full, h, seed::mix(cfg.split.seed, &[0x401d]))?;
                fs::create_dir_all(&split_dir).map_err(io_err(&split_dir))?;
                s.validation.write_csv(&split_dir.join("test.csv"))?;
                (s.train, Some(s.validation))
            }
            None => (full, None),
        },
    };

    let split = stratified_split(&development, cfg.split.fraction, cfg.split.seed)?;
    split.write_to(&split_dir)?;
    log::info!(
        "{}: {} train / {} validation images",
        cfg.name,
        split.train.len(),
        split.validation.len()
    );

    let augmented = expand_dataset(&split.train, &cfg.augmentation_config(), &dir.join("augmented"), true)?;
    log::info!("{}: {} augmented training samples", cfg.name, augmented.len());

    let train_labels = derive_task_manifest(&split.train, cfg.task).labels();
    let val_task = derive_task_manifest(&split.validation, cfg.task);
    let eval_task = derive_task_manifest(held_out.as_ref().unwrap_or(&split.validation), cfg.task);

    // Every run has its own seed, so running them concurrently gives the
    // same artifacts as running them one after another.
    let per_model = cfg
        .models
        .par_iter()
        .enumerate()
        .map(|(i, m)| -> Result<(RunRecord, Option<PredictionSet>)> {
            let spec = m.backbone();
            let schedule = m.training_schedule(&cfg.train)?;
            let run_id = m.run_id(i);
            let run_dir = dir.join("runs").join(&run_id);
            fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
            cfg.save(&run_dir.join(SNAPSHOT_FILE))?;

            let train_set = LabeledSet::from_augmented(&spec, &augmented, &train_labels)?;
            let val_set = LabeledSet::from_task_manifest(&spec, &val_task)?;
            let outcome = train(
                &spec,
                &schedule,
                &train_set,
                &val_set,
                m.seed,
                &TrainOptions {
                    run_id: run_id.clone(),
                    task: cfg.task,
                    run_dir: Some(run_dir),
                    criterion: cfg.train.selection,
                },
            )?;
            if opts.train_only {
                return Ok((outcome.record, None));
            }
            let mut pred = predict_dataset(&outcome.best, &eval_task)?;
            pred.source = run_id;
            Ok((outcome.record, Some(pred)))
        })
        .collect::<Result<Vec<_>>>()?;

    let (runs, preds): (Vec<RunRecord>, Vec<Option<PredictionSet>>) = per_model.into_iter().unzip();
    if opts.train_only {
        return Ok(ExperimentOutcome {
            dir: dir.to_path_buf(),
            runs,
            predictions: Vec::new(),
            fused: None,
            report: None,
        });
    }
    let predictions: Vec<PredictionSet> = preds.into_iter().flatten().collect();

    let pred_dir = dir.join("predictions");
    fs::create_dir_all(&pred_dir).map_err(io_err(&pred_dir))?;
    for p in &predictions {
        p.write_csv(&pred_dir.join(format!("{}.csv", p.source)))?;
    }
    let fused = if cfg.ensemble {
        let f = ensemble_mean(&predictions)?;
        f.write_csv(&pred_dir.join("ensemble.csv"))?;
        f
    } else {
        predictions[0].clone()
    };

    let labels = eval_task.labels();
    for p in &predictions {
        evaluate(p, &labels, cfg.threshold)?.write_to(&dir.join("runs").join(&p.source).join("eval"))?;
    }
    let report = evaluate(&fused, &labels, cfg.threshold)?;
    report.write_to(&dir.join("report"))?;
    log::info!(
        "{}: {} AUC {}",
        cfg.name,
        fused.source,
        report.auc.map_or("n/a".into(), |a| format!("{a:.4}"))
    );

    Ok(ExperimentOutcome {
        dir: dir.to_path_buf(),
        runs,
        predictions,
        fused: Some(fused),
        report: Some(report),
    })
}
