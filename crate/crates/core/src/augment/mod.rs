//! Geometric preprocessing and seeded augmentation.
//!
//! Augmentation happens at native resolution by default; the model-facing
//! resize (and crop) is applied afterwards when samples are loaded for
//! training or inference. Setting [`AugmentationConfig::pre_resize`] moves the
//! resize in front of the augmentation instead.

mod expansion;
mod geometry;
mod params;

pub use expansion::{
    expand_dataset, plan_expansion, AugmentedEntry, AugmentedManifest, ExpansionPlan,
    AUGMENTED_HEADER,
};
pub use geometry::{apply_affine, center_crop, random_crop, resize_preserve_aspect, Letterbox};
pub use params::{sample_affine_params, AffineParams, AugmentationConfig};
