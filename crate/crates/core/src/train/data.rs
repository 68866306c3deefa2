use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::augment::AugmentedManifest;
use crate::dataset::TaskManifest;
use crate::error::{Error, Result};
use crate::nn::BackboneSpec;
use crate::raster::RasterImage;

/// Images held in memory at the backbone's load geometry, with class labels
/// (1 = positive).
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub ids: Vec<String>,
    pub images: Vec<RasterImage>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn load(spec: &BackboneSpec, items: Vec<(String, &Path, bool)>) -> Result<LabeledSet> {
        let images = items
            .par_iter()
            .map(|(_, path, _)| spec.prepare_load(&RasterImage::open(path)?))
            .collect::<Result<Vec<_>>>()?;
        let (ids, labels) = items.into_iter().map(|(id, _, pos)| (id, pos as usize)).unzip();
        Ok(LabeledSet { ids, images, labels })
    }

    pub fn from_task_manifest(spec: &BackboneSpec, manifest: &TaskManifest) -> Result<LabeledSet> {
        Self::load(
            spec,
            manifest
                .records
                .iter()
                .map(|r| (r.image_id.clone(), r.image_path.as_path(), r.positive))
                .collect(),
        )
    }

    /// Every augmented copy becomes one sample, labelled like its source
    /// image. Sample ids are `{image_id}#{copy_index}`.
    pub fn from_augmented(
        spec: &BackboneSpec,
        augmented: &AugmentedManifest,
        labels: &BTreeMap<String, bool>,
    ) -> Result<LabeledSet> {
        let items = augmented
            .entries
            .iter()
            .map(|e| {
                let pos = labels.get(&e.image_id).ok_or_else(|| {
                    Error::KeyMismatch(format!("augmented image {} has no label", e.image_id))
                })?;
                Ok((format!("{}#{}", e.image_id, e.copy_index), e.path.as_path(), *pos))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::load(spec, items)
    }
}
