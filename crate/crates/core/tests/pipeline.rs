use std::fs;
use std::path::Path;

use lesion_core::experiment::{
    generate_synthetic, preset, run_experiment, surrogate_of, ExperimentConfig, PipelineOptions, SyntheticSpec,
    FAILED_MARKER, SNAPSHOT_FILE,
};
use lesion_core::Error;

fn small_config(data: &Path, out: &Path) -> ExperimentConfig {
    let ds = generate_synthetic(
        data,
        &SyntheticSpec {
            melanoma: 12,
            seborrheic_keratosis: 8,
            nevus: 30,
            min_side: 24,
            max_side: 40,
            seed: 3,
        },
    )
    .unwrap();
    let mut cfg = surrogate_of(preset("mel_ensemble").unwrap(), &ds.manifest_path, &ds.image_root);
    for m in &mut cfg.models {
        m.schedule_divisor = 12;
    }
    cfg.augmentation.global_target_factor = 2.0;
    cfg.augmentation.pre_resize = Some(40);
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn full_pipeline_writes_every_artifact_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("data"), &tmp.path().join("exp"));
    let outcome = run_experiment(&cfg, PipelineOptions::default()).unwrap();
    let exp = tmp.path().join("exp");

    for f in [
        SNAPSHOT_FILE,
        "split/train.csv",
        "split/val.csv",
        "split/test.csv",
        "split/split.meta",
        "augmented/augmented.csv",
        "predictions/ensemble.csv",
        "report/report.txt",
        "report/report.kv",
        "report/roc.csv",
    ] {
        assert!(exp.join(f).is_file(), "missing {f}");
    }
    assert!(!exp.join(FAILED_MARKER).exists());
    assert_eq!(outcome.runs.len(), 3);
    for r in &outcome.runs {
        let run = exp.join("runs").join(&r.run_id);
        assert!(run.join("metrics.csv").is_file());
        assert!(run.join(SNAPSHOT_FILE).is_file());
        assert!(run.join("eval/report.kv").is_file());
        assert_eq!(r.checkpoints.len(), r.schedule.total_epochs as usize);
        assert!(exp.join("predictions").join(format!("{}.csv", r.run_id)).is_file());
    }
    let fused = outcome.fused.unwrap();
    // 25% of 50 images held out
    assert_eq!(fused.len(), 13);
    assert_eq!(outcome.report.unwrap().confusion.total(), 13);

    // replay from the snapshot into a fresh directory
    let mut replay = ExperimentConfig::load(&exp.join(SNAPSHOT_FILE)).unwrap();
    assert_eq!(replay, cfg);
    replay.output_dir = tmp.path().join("replay");
    let again = run_experiment(&replay, PipelineOptions::default()).unwrap();
    for r in &again.runs {
        let a = fs::read(exp.join("runs").join(&r.run_id).join("metrics.csv")).unwrap();
        let b = fs::read(tmp.path().join("replay/runs").join(&r.run_id).join("metrics.csv")).unwrap();
        assert_eq!(a, b, "{}", r.run_id);
    }
    assert_eq!(
        fs::read(exp.join("predictions/ensemble.csv")).unwrap(),
        fs::read(tmp.path().join("replay/predictions/ensemble.csv")).unwrap()
    );

    // existing outputs are protected
    assert!(matches!(
        run_experiment(&cfg, PipelineOptions::default()),
        Err(Error::OutputExists(_))
    ));
}

#[test]
fn failure_leaves_marker_and_no_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("data"), &tmp.path().join("exp"));
    let victim = fs::read_dir(&cfg.data.image_root).unwrap().next().unwrap().unwrap().path();
    fs::remove_file(victim).unwrap();

    assert!(run_experiment(&cfg, PipelineOptions::default()).is_err());
    let exp = tmp.path().join("exp");
    let marker = fs::read_to_string(exp.join(FAILED_MARKER)).unwrap();
    assert!(marker.contains("missing"), "{marker}");
    assert!(!exp.join("report").exists());
}

#[test]
fn train_only_stops_before_prediction() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&tmp.path().join("data"), &tmp.path().join("exp"));
    cfg.models.truncate(1);
    cfg.ensemble = false;
    let out = run_experiment(
        &cfg,
        PipelineOptions {
            overwrite: false,
            train_only: true,
        },
    )
    .unwrap();
    assert_eq!(out.runs.len(), 1);
    assert!(out.report.is_none());
    assert!(!tmp.path().join("exp/predictions").exists());
}
