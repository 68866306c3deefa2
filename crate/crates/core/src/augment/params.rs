use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Sampling ranges for the affine augmentation and the expansion targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Shear angle is drawn from `[-shear_range_deg, shear_range_deg]`.
    pub shear_range_deg: f64,
    pub zoom_range: (f64, f64),
    /// Shifts are drawn from `[-f * dim, f * dim]` per axis.
    pub shift_fraction: f64,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Upper bound on outputs per source image (original included).
    pub expansion_cap: u32,
    /// Desired total output / total input.
    pub global_target_factor: f64,
    pub seed: u64,
    /// Letterbox every source image to this square size before augmenting.
    pub pre_resize: Option<u32>,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            shear_range_deg: 10.0,
            zoom_range: (0.85, 1.15),
            shift_fraction: 0.10,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            expansion_cap: 8,
            global_target_factor: 5.0,
            seed: 0,
            pre_resize: None,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("zoom range must be positive and ordered, got [{lo}, {hi}]"));
        }
        if !(0.0..90.0).contains(&self.shear_range_deg) {
            return bad(format!("shear range {} outside [0, 90)", self.shear_range_deg));
        }
        if !(self.shift_fraction >= 0.0 && self.shift_fraction.is_finite()) {
            return bad(format!("shift fraction {} must be >= 0", self.shift_fraction));
        }
        for (name, p) in [("hflip_prob", self.hflip_prob), ("vflip_prob", self.vflip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if self.expansion_cap < 1 {
            return bad("expansion_cap must be >= 1".into());
        }
        if !(self.global_target_factor > 0.0 && self.global_target_factor.is_finite()) {
            return bad(format!(
                "global_target_factor {} must be positive",
                self.global_target_factor
            ));
        }
        if self.pre_resize == Some(0) {
            return bad("pre_resize must be >= 1".into());
        }
        Ok(())
    }
}

/// One sampled instance of the geometric transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub shear_deg: f64,
    pub zoom: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub hflip: bool,
    pub vflip: bool,
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams {
            shear_deg: 0.0,
            zoom: 1.0,
            shift_x: 0.0,
            shift_y: 0.0,
            hflip: false,
            vflip: false,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

fn symmetric<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Draws the transform for copy `copy_index` of `image_id` (a `width x
/// height` image). The stream depends only on `(cfg.seed, image_id,
/// copy_index)`.
pub fn sample_affine_params(
    cfg: &AugmentationConfig,
    image_id: &str,
    copy_index: u32,
    width: u32,
    height: u32,
) -> AffineParams {
    let mut rng = seed::rng_from(seed::mix_str(cfg.seed, image_id, u64::from(copy_index)));
    let shear_deg = symmetric(&mut rng, cfg.shear_range_deg);
    let (lo, hi) = cfg.zoom_range;
    let zoom = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let shift_x = symmetric(&mut rng, cfg.shift_fraction * f64::from(width));
    let shift_y = symmetric(&mut rng, cfg.shift_fraction * f64::from(height));
    let hflip = rng.random::<f64>() < cfg.hflip_prob;
    let vflip = rng.random::<f64>() < cfg.vflip_prob;
    AffineParams {
        shear_deg,
        zoom,
        shift_x,
        shift_y,
        hflip,
        vflip,
    }
}
