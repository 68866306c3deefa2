use std::fs;

use lesion_core::nn::{build_model, Architecture, BackboneSpec, Batch, ModelState, SgdConfig};
use lesion_core::raster::RasterImage;
use lesion_core::{seed, Error};
use rand::Rng;

fn images(n: usize, size: u32, s: u64) -> Vec<RasterImage> {
    let mut rng = seed::rng_from(s);
    (0..n)
        .map(|_| {
            let data = (0..size * size * 3).map(|_| rng.random::<u8>()).collect();
            RasterImage::from_raw(size, size, data).unwrap()
        })
        .collect()
}

fn trained_model(spec: &BackboneSpec) -> ModelState {
    let mut m = build_model(spec, 21).unwrap();
    let imgs = images(4, spec.input_size, 1);
    let refs: Vec<&RasterImage> = imgs.iter().collect();
    let batch = Batch::from_images((0..4).map(|i| format!("i{i}")).collect(), &refs, vec![0, 1, 1, 0]).unwrap();
    for _ in 0..3 {
        m.sgd_step(&batch, &SgdConfig::default()).unwrap();
    }
    m.epoch = 15;
    m
}

#[test]
fn round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = BackboneSpec::new(Architecture::TinySurrogate, 16);
    let mut model = trained_model(&spec);
    let path = dir.path().join("epoch_15.ckpt");
    model.save_checkpoint(&path).unwrap();

    let mut back = ModelState::load_checkpoint(&path).unwrap();
    assert_eq!(back.epoch, 15);
    assert_eq!(back.spec, spec);
    let probe = images(5, 16, 9);
    assert_eq!(model.forward_softmax(&probe).unwrap(), back.forward_softmax(&probe).unwrap());
    for ((na, a), (nb, b)) in model.params().iter().zip(back.params()) {
        assert_eq!(na, &nb);
        assert_eq!(a.value, b.value);
        assert_eq!(a.velocity, b.velocity);
    }
    // the training stream continues where it stopped
    assert_eq!(model.next_u64(), back.next_u64());
}

#[test]
fn googlenet_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = BackboneSpec::new(Architecture::GoogleNetStyle, 224)
        .with_crop_from(256)
        .with_divisor(32);
    let model = build_model(&spec, 4).unwrap();
    let path = dir.path().join("g.ckpt");
    model.save_checkpoint(&path).unwrap();
    let back = ModelState::load_checkpoint_for(&path, &spec).unwrap();
    let probe = images(2, 224, 3);
    assert_eq!(model.forward_softmax(&probe).unwrap(), back.forward_softmax(&probe).unwrap());
}

#[test]
fn architecture_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = BackboneSpec::new(Architecture::TinySurrogate, 16);
    let path = dir.path().join("t.ckpt");
    build_model(&spec, 1).unwrap().save_checkpoint(&path).unwrap();
    let other = BackboneSpec::new(Architecture::TinySurrogate, 20);
    assert!(matches!(
        ModelState::load_checkpoint_for(&path, &other),
        Err(Error::Checkpoint { .. })
    ));
}

#[test]
fn corrupt_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = BackboneSpec::new(Architecture::TinySurrogate, 8);
    let path = dir.path().join("t.ckpt");
    build_model(&spec, 1).unwrap().save_checkpoint(&path).unwrap();
    let bytes = fs::read(&path).unwrap();

    let mut wrong_version = bytes.clone();
    wrong_version[8] = 99;
    fs::write(&path, &wrong_version).unwrap();
    let err = ModelState::load_checkpoint(&path).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");

    fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(ModelState::load_checkpoint(&path).is_err());

    fs::write(&path, b"not a checkpoint").unwrap();
    assert!(ModelState::load_checkpoint(&path).is_err());
}

#[test]
fn pretrained_backbone_is_copied_and_head_reinitialised() {
    let dir = tempfile::tempdir().unwrap();
    let donor_spec = BackboneSpec::new(Architecture::TinySurrogate, 16);
    let donor = trained_model(&donor_spec);
    let path = dir.path().join("donor.ckpt");
    donor.save_checkpoint(&path).unwrap();

    let mut spec = donor_spec.clone();
    spec.pretrained_ref = Some(path);
    let model = build_model(&spec, 99).unwrap();
    let (dp, mp) = (donor.params(), model.params());
    let last = dp.len() - 2;
    for i in 0..last {
        assert_eq!(dp[i].1.value, mp[i].1.value, "{}", dp[i].0);
    }
    assert_ne!(dp[last].1.value, mp[last].1.value);
    assert_eq!(model.epoch, 0);
}
