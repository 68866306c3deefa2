use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lesion(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lesion"))
        .args(args)
        .env("LESION_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TRUTH: &str = "image_id,melanoma,seborrheic_keratosis\n\
ISIC_0000000,1,0\nISIC_0000001,0,0\nISIC_0000002,0,1\nISIC_0000003,1,0\nISIC_0000004,0,0\n";

const PERFECT: &str = "image_id,score\n\
ISIC_0000000,0.910000\nISIC_0000001,0.120000\nISIC_0000002,0.300000\nISIC_0000003,0.700000\nISIC_0000004,0.050000\n";

#[test]
fn evaluate_perfect_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("truth.csv"), TRUTH).unwrap();
    fs::write(tmp.path().join("pred.csv"), PERFECT).unwrap();
    let truth = tmp.path().join("truth.csv");
    let pred = tmp.path().join("pred.csv");
    let args = [
        "evaluate",
        "--predictions",
        pred.to_str().unwrap(),
        "--manifest",
        truth.to_str().unwrap(),
        "--task",
        "melanoma",
        "--out",
        "eval",
    ];
    let stdout = ok(&lesion(tmp.path(), &args));
    assert!(stdout.contains("auc"), "{stdout}");
    let kv = fs::read_to_string(tmp.path().join("eval/report.kv")).unwrap();
    assert!(kv.contains("auc = 1\n"), "{kv}");
    assert!(kv.contains("accuracy = 1\n"));
    assert!(tmp.path().join("eval/roc.csv").is_file());
    assert!(tmp.path().join("eval/config.snapshot").is_file());

    // second run refuses to clobber, --overwrite replaces
    assert!(!lesion(tmp.path(), &args).status.success());
    let mut again = args.to_vec();
    again.push("--overwrite");
    ok(&lesion(tmp.path(), &again));
}

#[test]
fn ensemble_of_copies_is_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("p.csv");
    fs::write(&p, PERFECT).unwrap();
    let ps = p.to_str().unwrap();
    ok(&lesion(
        tmp.path(),
        &["ensemble", "--task", "melanoma", "--inputs", ps, ps, ps, "--out", "fused.csv"],
    ));
    assert_eq!(fs::read_to_string(tmp.path().join("fused.csv")).unwrap(), PERFECT);
}

#[test]
fn mismatched_ensemble_inputs_fail_with_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    fs::write(&a, PERFECT).unwrap();
    fs::write(&b, "image_id,score\nISIC_0000000,0.5\n").unwrap();
    let out = lesion(
        tmp.path(),
        &[
            "ensemble",
            "--task",
            "melanoma",
            "--inputs",
            a.to_str().unwrap(),
            b.to_str().unwrap(),
            "--out",
            "fused.csv",
        ],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert!(!tmp.path().join("fused.csv").exists());
    assert!(tmp.path().join("fused.csv.FAILED").is_file());
}

#[test]
fn missing_inputs_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lesion(
        tmp.path(),
        &[
            "evaluate",
            "--predictions",
            "nope.csv",
            "--manifest",
            "nope.csv",
            "--task",
            "sk",
            "--out",
            "e",
        ],
    );
    assert!(!out.status.success());
    assert!(tmp.path().join("e/FAILED").is_file());
    assert!(!tmp.path().join("e/report.txt").exists());
}

#[test]
fn presets_print_and_unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["sk_alexnet350", "mel_googlenet256", "mel_googlenet224", "mel_alexnet224", "mel_ensemble"] {
        let text = ok(&lesion(tmp.path(), &["preset", name]));
        assert!(text.contains(&format!("name = \"{name}\"")), "{text}");
    }
    assert!(!lesion(tmp.path(), &["preset", "nope"]).status.success());

    ok(&lesion(tmp.path(), &["preset", "mel_alexnet224", "--out", "c.toml"]));
    let cfg = tmp.path().join("c.toml");
    let text = fs::read_to_string(&cfg).unwrap().replace("threshold =", "treshold =");
    fs::write(&cfg, text).unwrap();
    let out = lesion(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("treshold"));
}

#[test]
fn synth_split_augment_predict_chain() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&lesion(tmp.path(), &["synth", "--out", "syn"]));
    let manifest = tmp.path().join("syn/ground_truth.csv");
    let images = tmp.path().join("syn/images");
    let (m, i) = (manifest.to_str().unwrap(), images.to_str().unwrap());

    let stdout = ok(&lesion(
        tmp.path(),
        &["split", "--manifest", m, "--image-root", i, "--ext", "png", "--out", "split"],
    ));
    assert!(stdout.contains("160 train / 40 validation"), "{stdout}");
    let train_csv = tmp.path().join("split/train.csv");

    ok(&lesion(
        tmp.path(),
        &[
            "augment",
            "--manifest",
            train_csv.to_str().unwrap(),
            "--image-root",
            i,
            "--ext",
            "png",
            "--seed",
            "4",
            "--out",
            "aug",
        ],
    ));
    assert!(tmp.path().join("aug/augmented.csv").is_file());

    // a checkpoint from the core API, scored through the CLI
    let spec = lesion_core::nn::BackboneSpec::new(lesion_core::nn::Architecture::TinySurrogate, 16);
    let ckpt = tmp.path().join("m.ckpt");
    lesion_core::nn::build_model(&spec, 1).unwrap().save_checkpoint(&ckpt).unwrap();
    let val_csv = tmp.path().join("split/val.csv");
    ok(&lesion(
        tmp.path(),
        &[
            "predict",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--manifest",
            val_csv.to_str().unwrap(),
            "--image-root",
            i,
            "--ext",
            "png",
            "--task",
            "melanoma",
            "--out",
            "pred/val.csv",
        ],
    ));
    let pred = fs::read_to_string(tmp.path().join("pred/val.csv")).unwrap();
    assert_eq!(pred.lines().count(), 41);
    assert!(pred.starts_with("image_id,score\n"));
}
