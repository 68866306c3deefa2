use std::path::{Path, PathBuf};

use super::config::{AugmentSection, DataConfig, ExperimentConfig, ModelConfig, SplitConfig, TrainSection};
use crate::augment::AugmentationConfig;
use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::nn::Architecture;
use crate::seed;
use crate::train::ScheduleId;

pub const PRESET_NAMES: [&str; 5] = [
    "sk_alexnet350",
    "mel_googlenet256",
    "mel_googlenet224",
    "mel_alexnet224",
    "mel_ensemble",
];

const DEFAULT_SEED: u64 = 2017;

/// Schedule compression and rate scale used for the surrogate recipes.
pub const SURROGATE_SCHEDULE_DIVISOR: u32 = 2;
pub const SURROGATE_LR_SCALE: f64 = 20.0;
pub const SURROGATE_HOLDOUT_FRACTION: f64 = 0.25;

fn model(arch: Architecture, input: u32, crop_from: Option<u32>, schedule: ScheduleId, index: u64) -> ModelConfig {
    let weights = match arch {
        Architecture::AlexNetStyle => "weights/alexnet_imagenet.ckpt",
        _ => "weights/googlenet_imagenet.ckpt",
    };
    ModelConfig {
        architecture: arch,
        input_size: input,
        random_crop_from: crop_from,
        channel_divisor: 1,
        pretrained: Some(PathBuf::from(weights)),
        schedule,
        schedule_divisor: 1,
        lr_scale: 1.0,
        seed: seed::mix(DEFAULT_SEED, &[0x30de1, index]),
    }
}

fn base(name: &str, task: Task, models: Vec<ModelConfig>) -> ExperimentConfig {
    let aug = AugmentationConfig {
        seed: seed::mix(DEFAULT_SEED, &[0xa06]),
        pre_resize: Some(512),
        ..Default::default()
    };
    ExperimentConfig {
        name: name.into(),
        task,
        output_dir: PathBuf::from("experiments").join(name),
        threshold: crate::ensemble::DEFAULT_THRESHOLD,
        ensemble: models.len() > 1,
        data: DataConfig {
            manifest: "data/ISIC-2017_Training_Part3_GroundTruth.csv".into(),
            image_root: "data/ISIC-2017_Training_Data".into(),
            image_ext: "jpg".into(),
            test_manifest: Some("data/ISIC-2017_Validation_Part3_GroundTruth.csv".into()),
            test_image_root: Some("data/ISIC-2017_Validation_Data".into()),
            holdout_fraction: None,
        },
        split: SplitConfig {
            fraction: 0.2,
            seed: DEFAULT_SEED,
        },
        augmentation: AugmentSection::from(&aug),
        train: TrainSection::default(),
        models,
    }
}

/// The shipped recipes.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    use Architecture::*;
    let g256 = || model(GoogleNetStyle, 224, Some(256), ScheduleId::MelGoogleNet256, 0);
    let g224 = || model(GoogleNetStyle, 224, None, ScheduleId::MelGoogleNet224, 1);
    let a224 = || model(AlexNetStyle, 224, None, ScheduleId::MelAlexNet224, 2);
    Ok(match name {
        "sk_alexnet350" => base(
            name,
            Task::SeborrheicKeratosis,
            vec![model(AlexNetStyle, 350, None, ScheduleId::SkAlexNet350, 0)],
        ),
        "mel_googlenet256" => base(name, Task::Melanoma, vec![g256()]),
        "mel_googlenet224" => base(name, Task::Melanoma, vec![g224()]),
        "mel_alexnet224" => base(name, Task::Melanoma, vec![a224()]),
        "mel_ensemble" => base(name, Task::Melanoma, vec![g256(), g224(), a224()]),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset {other:?}; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}

/// Desk-scale version of a recipe: every backbone becomes the tiny
/// surrogate at proportionally scaled geometry (224 -> 28, 256 -> 32,
/// 350 -> 44), schedules keep their stage structure but are shortened, no
/// pretrained weights are used, and a stratified share of `manifest` is held
/// out for the final report.
pub fn surrogate_of(mut cfg: ExperimentConfig, manifest: &Path, image_root: &Path) -> ExperimentConfig {
    let scale = |px: u32| (px + 4) / 8;
    for m in &mut cfg.models {
        m.architecture = Architecture::TinySurrogate;
        m.input_size = scale(m.input_size);
        m.random_crop_from = m.random_crop_from.map(scale);
        m.channel_divisor = 1;
        m.pretrained = None;
        m.schedule_divisor = SURROGATE_SCHEDULE_DIVISOR;
        m.lr_scale = SURROGATE_LR_SCALE;
    }
    cfg.name = format!("{}_surrogate", cfg.name);
    cfg.output_dir = PathBuf::from("experiments").join(&cfg.name);
    cfg.data = DataConfig {
        manifest: manifest.to_path_buf(),
        image_root: image_root.to_path_buf(),
        image_ext: "png".into(),
        test_manifest: None,
        test_image_root: None,
        holdout_fraction: Some(SURROGATE_HOLDOUT_FRACTION),
    };
    cfg.augmentation.pre_resize = Some(64);
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_values() {
        for name in PRESET_NAMES {
            preset(name).unwrap().check_values().unwrap();
            let s = surrogate_of(preset(name).unwrap(), Path::new("m.csv"), Path::new("img"));
            s.check_values().unwrap();
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn ensemble_has_three_models() {
        let cfg = preset("mel_ensemble").unwrap();
        assert!(cfg.ensemble);
        let ids: Vec<String> = cfg.models.iter().enumerate().map(|(i, m)| m.run_id(i)).collect();
        assert_eq!(ids, ["m0_googlenet256c224", "m1_googlenet224", "m2_alexnet224"]);
        let sk = preset("sk_alexnet350").unwrap();
        assert_eq!(sk.task, Task::SeborrheicKeratosis);
        assert!(!sk.ensemble);
    }
}
