use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationConfig;
use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::nn::{Architecture, BackboneSpec};
use crate::seed;
use crate::train::{make_paper_schedule, ScheduleId, SelectionCriterion, TrainingSchedule};

/// Where the images and ground truth live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// `image_id,melanoma,seborrheic_keratosis` ground-truth CSV.
    pub manifest: PathBuf,
    pub image_root: PathBuf,
    #[serde(default = "default_ext")]
    pub image_ext: String,
    /// Separate labelled evaluation set. When absent, a stratified
    /// `holdout_fraction` of the manifest is set aside instead, and failing
    /// that the validation split is reported on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_image_root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_fraction: Option<f64>,
}

fn default_ext() -> String {
    "jpg".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of every class moved to validation.
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub shear_range_deg: f64,
    pub zoom_min: f64,
    pub zoom_max: f64,
    pub shift_fraction: f64,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub expansion_cap: u32,
    pub global_target_factor: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_resize: Option<u32>,
}

impl From<&AugmentSection> for AugmentationConfig {
    fn from(a: &AugmentSection) -> Self {
        AugmentationConfig {
            shear_range_deg: a.shear_range_deg,
            zoom_range: (a.zoom_min, a.zoom_max),
            shift_fraction: a.shift_fraction,
            hflip_prob: a.hflip_prob,
            vflip_prob: a.vflip_prob,
            expansion_cap: a.expansion_cap,
            global_target_factor: a.global_target_factor,
            seed: a.seed,
            pre_resize: a.pre_resize,
        }
    }
}

impl From<&AugmentationConfig> for AugmentSection {
    fn from(a: &AugmentationConfig) -> Self {
        AugmentSection {
            shear_range_deg: a.shear_range_deg,
            zoom_min: a.zoom_range.0,
            zoom_max: a.zoom_range.1,
            shift_fraction: a.shift_fraction,
            hflip_prob: a.hflip_prob,
            vflip_prob: a.vflip_prob,
            expansion_cap: a.expansion_cap,
            global_target_factor: a.global_target_factor,
            seed: a.seed,
            pre_resize: a.pre_resize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub selection: SelectionCriterion,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: crate::train::DEFAULT_BATCH_SIZE,
            momentum: crate::train::DEFAULT_MOMENTUM,
            weight_decay: crate::train::DEFAULT_WEIGHT_DECAY,
            selection: SelectionCriterion::ValAccuracy,
        }
    }
}

/// One backbone to fine-tune.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub input_size: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_crop_from: Option<u32>,
    #[serde(default = "one")]
    pub channel_divisor: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<PathBuf>,
    pub schedule: ScheduleId,
    /// Stage lengths become `ceil(len / schedule_divisor)`.
    #[serde(default = "one")]
    pub schedule_divisor: u32,
    #[serde(default = "unit")]
    pub lr_scale: f64,
    pub seed: u64,
}

fn one() -> u32 {
    1
}

fn unit() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn backbone(&self) -> BackboneSpec {
        BackboneSpec {
            architecture: self.architecture,
            input_size: self.input_size,
            num_classes: 2,
            pretrained_ref: self.pretrained.clone(),
            random_crop_from: self.random_crop_from,
            channel_divisor: self.channel_divisor,
        }
    }

    pub fn training_schedule(&self, train: &TrainSection) -> Result<TrainingSchedule> {
        let mut s = make_paper_schedule(self.schedule);
        if self.schedule_divisor != 1 || self.lr_scale != 1.0 {
            s = s.compressed(self.schedule_divisor, self.lr_scale)?;
        }
        s.batch_size = train.batch_size;
        s.momentum = train.momentum;
        s.weight_decay = train.weight_decay;
        s.validate()?;
        Ok(s)
    }

    /// Run directory name, e.g. `m0_googlenet256c224`.
    pub fn run_id(&self, index: usize) -> String {
        format!("m{index}_{}", self.backbone().model_id())
    }
}

/// Everything needed to replay an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Task,
    pub output_dir: PathBuf,
    pub threshold: f64,
    /// Fuse all models by softmax mean; otherwise the first model is
    /// reported alone.
    pub ensemble: bool,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub augmentation: AugmentSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(rename = "model")]
    pub models: Vec<ModelConfig>,
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.check_values().map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn augmentation_config(&self) -> AugmentationConfig {
        (&self.augmentation).into()
    }

    /// Value checks that do not touch the filesystem.
    pub fn check_values(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.name.is_empty() {
            return bad("name must not be empty".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if !(self.split.fraction > 0.0 && self.split.fraction < 1.0) {
            return bad(format!("split.fraction {} outside (0, 1)", self.split.fraction));
        }
        if let Some(h) = self.data.holdout_fraction {
            if !(h > 0.0 && h < 1.0) {
                return bad(format!("data.holdout_fraction {h} outside (0, 1)"));
            }
        }
        if self.data.test_manifest.is_some() != self.data.test_image_root.is_some() {
            return bad("data.test_manifest and data.test_image_root go together".into());
        }
        if self.models.is_empty() {
            return bad("at least one [[model]] is required".into());
        }
        self.augmentation_config().validate()?;
        for m in &self.models {
            m.backbone().validate()?;
            m.training_schedule(&self.train)?;
        }
        Ok(())
    }

    /// Full validation including referenced paths.
    pub fn validate(&self) -> Result<()> {
        self.check_values()?;
        let mut paths = vec![&self.data.manifest, &self.data.image_root];
        paths.extend(self.data.test_manifest.iter());
        paths.extend(self.data.test_image_root.iter());
        paths.extend(self.models.iter().filter_map(|m| m.pretrained.as_ref()));
        if let Some(missing) = paths.into_iter().find(|p| !p.exists()) {
            return Err(Error::Validation(format!("{} does not exist", missing.display())));
        }
        Ok(())
    }

    /// Replaces every seed with one derived from `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.augmentation.seed = seed::mix(seed, &[0xa06]);
        for (i, m) in self.models.iter_mut().enumerate() {
            m.seed = seed::mix(seed, &[0x30de1, i as u64]);
        }
    }

    /// Re-roots relative data paths at `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.manifest);
        fix(&mut self.data.image_root);
        self.data.test_manifest.as_mut().map(fix);
        self.data.test_image_root.as_mut().map(fix);
        for m in &mut self.models {
            m.pretrained.as_mut().map(fix);
        }
    }
}
