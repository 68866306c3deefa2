use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{Diagnosis, DatasetManifest, LesionRecord};
use crate::error::{Error, Result};
use crate::raster::RasterImage;
use crate::seed;

/// Class sizes and image geometry of the bundled toy dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub melanoma: usize,
    pub seborrheic_keratosis: usize,
    pub nevus: usize,
    pub min_side: u32,
    pub max_side: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// 200 images with roughly the class balance of the ISIC training set.
    fn default() -> Self {
        SyntheticSpec {
            melanoma: 37,
            seborrheic_keratosis: 25,
            nevus: 138,
            min_side: 40,
            max_side: 96,
            seed: 7,
        }
    }
}

pub struct SyntheticDataset {
    pub manifest_path: PathBuf,
    pub image_root: PathBuf,
    pub manifest: DatasetManifest,
}

const SKIN: [f64; 3] = [226.0, 196.0, 178.0];

fn lesion_colour(d: Diagnosis) -> [f64; 3] {
    match d {
        // dark brown
        Diagnosis::Melanoma => [62.0, 38.0, 30.0],
        // bright tan
        Diagnosis::SeborrheicKeratosis => [198.0, 170.0, 48.0],
        // bright pink
        Diagnosis::Nevus => [206.0, 112.0, 128.0],
    }
}

/// Skin-coloured background with one soft-edged elliptical blob whose
/// colour encodes the class, plus pixel noise.
pub fn render_lesion(d: Diagnosis, seed: u64, min_side: u32, max_side: u32) -> RasterImage {
    let mut rng = seed::rng_from(seed);
    let w = rng.random_range(min_side..=max_side);
    let h = rng.random_range(min_side..=max_side);
    let base = lesion_colour(d);
    let colour: Vec<f64> = base.iter().map(|c| c + rng.random_range(-12.0..=12.0)).collect();
    let skin: Vec<f64> = SKIN.iter().map(|c| c + rng.random_range(-10.0..=10.0)).collect();
    let cx = w as f64 * rng.random_range(0.4..0.6);
    let cy = h as f64 * rng.random_range(0.4..0.6);
    let rx = w as f64 * rng.random_range(0.18..0.32);
    let ry = h as f64 * rng.random_range(0.18..0.32);

    let mut img = RasterImage::new(w, h).expect("non-zero size");
    for y in 0..h {
        for x in 0..w {
            let dx = (x as f64 - cx) / rx;
            let dy = (y as f64 - cy) / ry;
            let r = (dx * dx + dy * dy).sqrt();
            let alpha = (1.5 - r).clamp(0.0, 1.0);
            let mut px = [0u8; 3];
            for c in 0..3 {
                let v = alpha * colour[c] + (1.0 - alpha) * skin[c] + rng.random_range(-8.0..=8.0);
                px[c] = v.round().clamp(0.0, 255.0) as u8;
            }
            img.put_pixel(x, y, px);
        }
    }
    img
}

/// Writes `{dir}/images/*.png` and `{dir}/ground_truth.csv`.
pub fn generate_synthetic(dir: &Path, spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    if spec.min_side == 0 || spec.min_side > spec.max_side {
        return Err(Error::InvalidArgument(format!(
            "bad side range {}..={}",
            spec.min_side, spec.max_side
        )));
    }
    let image_root = dir.join("images");
    fs::create_dir_all(&image_root).map_err(|e| Error::io(image_root.display().to_string(), e))?;

    let mut plan = Vec::new();
    for (d, n) in [
        (Diagnosis::Melanoma, spec.melanoma),
        (Diagnosis::SeborrheicKeratosis, spec.seborrheic_keratosis),
        (Diagnosis::Nevus, spec.nevus),
    ] {
        plan.extend((0..n).map(|_| d));
    }
    // interleave classes so ids carry no label information
    let mut order: Vec<usize> = (0..plan.len()).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut seed::rng_from(seed::mix(spec.seed, &[0x0de7])));
    }

    let records = order
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let d = plan[p];
            let image_id = format!("SYN_{i:05}");
            let img = render_lesion(d, seed::mix(spec.seed, &[i as u64]), spec.min_side, spec.max_side);
            let image_path = image_root.join(format!("{image_id}.png"));
            img.save_png(&image_path)?;
            Ok(LesionRecord {
                image_id,
                image_path,
                diagnosis: d,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest::new(records, "synthetic")?;
    let manifest_path = dir.join("ground_truth.csv");
    manifest.write_csv(&manifest_path)?;
    Ok(SyntheticDataset {
        manifest_path,
        image_root,
        manifest,
    })
}
