use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::geometry::{apply_affine, resize_preserve_aspect};
use super::params::{sample_affine_params, AffineParams, AugmentationConfig};
use crate::dataset::{class_histogram, DatasetManifest};
use crate::error::{Error, Result};
use crate::raster::RasterImage;

pub const AUGMENTED_HEADER: [&str; 9] = [
    "image_id",
    "copy_index",
    "shear_deg",
    "zoom",
    "shift_x",
    "shift_y",
    "hflip",
    "vflip",
    "path",
];

/// Per-class output multipliers. A factor of `f` means each source image of
/// the class yields `f` outputs: the original plus `f - 1` augmented copies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpansionPlan<K: Ord> {
    /// Rebalancing multipliers before global scaling.
    pub base: BTreeMap<K, u32>,
    /// Integer factor applied to every base multiplier.
    pub scale: u32,
    /// Final multipliers, `min(base * scale, cap)`.
    pub factors: BTreeMap<K, u32>,
}

impl<K: Ord> ExpansionPlan<K> {
    pub fn copies(&self, class: &K) -> u32 {
        self.factors.get(class).map_or(0, |f| f - 1)
    }

    pub fn total_output(&self, counts: &BTreeMap<K, usize>) -> usize {
        counts
            .iter()
            .map(|(k, n)| n * self.factors.get(k).copied().unwrap_or(1) as usize)
            .sum()
    }
}

/// Rebalances towards the largest class (`round(n_max / n_c)`, clamped to
/// `[1, cap]`), then picks the smallest integer scale whose capped total
/// reaches `global_target_factor` times the input size. Classes with zero
/// records are ignored.
pub fn plan_expansion<K: Ord + Clone>(
    class_counts: &BTreeMap<K, usize>,
    cfg: &AugmentationConfig,
) -> ExpansionPlan<K> {
    let present: BTreeMap<K, usize> = class_counts
        .iter()
        .filter(|(_, n)| **n > 0)
        .map(|(k, n)| (k.clone(), *n))
        .collect();
    let cap = cfg.expansion_cap.max(1);
    let n_max = present.values().copied().max().unwrap_or(0);
    let base: BTreeMap<K, u32> = present
        .iter()
        .map(|(k, n)| {
            let m = (n_max as f64 / *n as f64).round_ties_even() as u32;
            (k.clone(), m.clamp(1, cap))
        })
        .collect();

    let total_in: usize = present.values().sum();
    let target = cfg.global_target_factor * total_in as f64;
    let scaled = |s: u32| -> BTreeMap<K, u32> {
        base.iter()
            .map(|(k, m)| (k.clone(), m.saturating_mul(s).min(cap)))
            .collect()
    };
    let mut scale = cap;
    for s in 1..=cap {
        let total: usize = scaled(s)
            .iter()
            .map(|(k, f)| present[k] * *f as usize)
            .sum();
        if total as f64 >= target {
            scale = s;
            break;
        }
    }
    ExpansionPlan {
        factors: scaled(scale),
        base,
        scale,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEntry {
    pub image_id: String,
    pub copy_index: u32,
    pub params: AffineParams,
    pub path: PathBuf,
}

/// Every output of an expansion run; copy 0 is the untransformed original.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentedManifest {
    pub entries: Vec<AugmentedEntry>,
}

impl AugmentedManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(AUGMENTED_HEADER)?;
        for e in &self.entries {
            let p = &e.params;
            w.write_record([
                e.image_id.clone(),
                e.copy_index.to_string(),
                p.shear_deg.to_string(),
                p.zoom.to_string(),
                p.shift_x.to_string(),
                p.shift_y.to_string(),
                u8::from(p.hflip).to_string(),
                u8::from(p.vflip).to_string(),
                e.path.display().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<AugmentedManifest> {
        let mut r = csv::Reader::from_path(path)?;
        if r.headers()?.iter().ne(AUGMENTED_HEADER) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("expected header {}", AUGMENTED_HEADER.join(",")),
            });
        }
        let mut entries = Vec::new();
        for row in r.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let err = |m: &str| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: m.to_string(),
            };
            if row.len() != AUGMENTED_HEADER.len() {
                return Err(err("wrong field count"));
            }
            let num = |i: usize| row[i].parse::<f64>().map_err(|_| err(AUGMENTED_HEADER[i]));
            let flag = |i: usize| match &row[i] {
                "1" => Ok(true),
                "0" => Ok(false),
                _ => Err(err(AUGMENTED_HEADER[i])),
            };
            entries.push(AugmentedEntry {
                image_id: row[0].to_string(),
                copy_index: row[1].parse().map_err(|_| err("copy_index"))?,
                params: AffineParams {
                    shear_deg: num(2)?,
                    zoom: num(3)?,
                    shift_x: num(4)?,
                    shift_y: num(5)?,
                    hflip: flag(6)?,
                    vflip: flag(7)?,
                },
                path: PathBuf::from(&row[8]),
            });
        }
        Ok(AugmentedManifest { entries })
    }
}

fn prepare_out_dir(out_dir: &Path, overwrite: bool) -> Result<()> {
    if out_dir.exists() {
        let occupied = fs::read_dir(out_dir)
            .map_err(|e| Error::io(out_dir.display().to_string(), e))?
            .next()
            .is_some();
        if occupied {
            if !overwrite {
                return Err(Error::OutputExists(out_dir.to_path_buf()));
            }
            fs::remove_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))
}

/// Materializes originals and augmented copies as
/// `{out_dir}/{image_id}_aug{copy_index}.png` following the class plan, and
/// writes `augmented.csv` next to them.
pub fn expand_dataset(
    train: &DatasetManifest,
    cfg: &AugmentationConfig,
    out_dir: &Path,
    overwrite: bool,
) -> Result<AugmentedManifest> {
    cfg.validate()?;
    prepare_out_dir(out_dir, overwrite)?;
    let plan = plan_expansion(&class_histogram(train), cfg);

    let per_image: Vec<Vec<AugmentedEntry>> = train
        .records()
        .par_iter()
        .map(|rec| -> Result<Vec<AugmentedEntry>> {
            let mut src = RasterImage::open(&rec.image_path)?;
            if let Some(t) = cfg.pre_resize {
                src = resize_preserve_aspect(&src, t)?;
            }
            let factor = plan.factors.get(&rec.diagnosis).copied().unwrap_or(1);
            let mut out = Vec::with_capacity(factor as usize);
            for copy_index in 0..factor {
                let params = if copy_index == 0 {
                    AffineParams::identity()
                } else {
                    sample_affine_params(cfg, &rec.image_id, copy_index, src.width(), src.height())
                };
                let img = apply_affine(&src, &params);
                let path = out_dir.join(format!("{}_aug{copy_index}.png", rec.image_id));
                img.save_png(&path)?;
                out.push(AugmentedEntry {
                    image_id: rec.image_id.clone(),
                    copy_index,
                    params,
                    path,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let manifest = AugmentedManifest {
        entries: per_image.into_iter().flatten().collect(),
    };
    manifest.write_csv(&out_dir.join("augmented.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Diagnosis, LesionRecord};

    fn counts(pairs: &[(&'static str, usize)]) -> BTreeMap<&'static str, usize> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn base_multipliers_rebalance() {
        let cfg = AugmentationConfig {
            global_target_factor: 1.0,
            ..Default::default()
        };
        let plan = plan_expansion(&counts(&[("A", 100), ("B", 20)]), &cfg);
        assert_eq!(plan.base, [("A", 1), ("B", 5)].into_iter().collect());
        assert_eq!(plan.scale, 1);

        let plan = plan_expansion(&counts(&[("A", 100), ("B", 100)]), &cfg);
        assert_eq!(plan.base, [("A", 1), ("B", 1)].into_iter().collect());
    }

    #[test]
    fn single_class_driven_by_global_factor() {
        let plan = plan_expansion(&counts(&[("A", 10)]), &AugmentationConfig::default());
        assert_eq!(plan.factors[&"A"], 5);
        assert_eq!(plan.copies(&"A"), 4);
        assert_eq!(plan.total_output(&counts(&[("A", 10)])), 50);
    }

    #[test]
    fn isic_counts_expand_about_five_times() {
        let c = counts(&[("mel", 374), ("sk", 254), ("nev", 1372)]);
        let plan = plan_expansion(&c, &AugmentationConfig::default());
        assert_eq!(plan.base, [("mel", 4), ("sk", 5), ("nev", 1)].into_iter().collect());
        assert_eq!(plan.scale, 4);
        assert_eq!(plan.factors, [("mel", 8), ("sk", 8), ("nev", 4)].into_iter().collect());
        let ratio = plan.total_output(&c) as f64 / 2000.0;
        assert!((4.5..=5.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn rebalanced_minority_within_band() {
        let c = counts(&[("pos", 20), ("neg", 100)]);
        let cfg = AugmentationConfig {
            global_target_factor: 1.0,
            ..Default::default()
        };
        let plan = plan_expansion(&c, &cfg);
        let pos = 20 * plan.factors[&"pos"] as usize;
        let neg = 100 * plan.factors[&"neg"] as usize;
        assert_eq!(plan.factors[&"pos"], 5);
        let r = pos as f64 / neg as f64;
        assert!((0.8..=1.25).contains(&r));
    }

    #[test]
    fn cap_is_respected() {
        let cfg = AugmentationConfig {
            expansion_cap: 3,
            global_target_factor: 50.0,
            ..Default::default()
        };
        let plan = plan_expansion(&counts(&[("a", 1), ("b", 100)]), &cfg);
        assert!(plan.factors.values().all(|f| *f <= 3));
        assert_eq!(plan.scale, 3);
    }

    fn write_sources(dir: &Path, n: usize, diagnosis: Diagnosis) -> Vec<LesionRecord> {
        (0..n)
            .map(|i| {
                let mut img = RasterImage::new(24, 18).unwrap();
                for (j, v) in img.as_raw_mut().iter_mut().enumerate() {
                    *v = ((i * 31 + j * 7) % 256) as u8;
                }
                let id = format!("{diagnosis}_{i}");
                let path = dir.join(format!("{id}.png"));
                img.save_png(&path).unwrap();
                LesionRecord {
                    image_id: id,
                    image_path: path,
                    diagnosis,
                }
            })
            .collect()
    }

    #[test]
    fn expansion_counts_and_determinism() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let records = write_sources(src.path(), 10, Diagnosis::Nevus);
        let manifest = DatasetManifest::new(records, "t").unwrap();
        let cfg = AugmentationConfig { seed: 5, ..Default::default() };

        let a = expand_dataset(&manifest, &cfg, &out.path().join("a"), false).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a.entries.iter().filter(|e| e.copy_index == 0).count(), 10);
        assert!(a
            .entries
            .iter()
            .filter(|e| e.copy_index == 0)
            .all(|e| e.params.is_identity()));

        let b = expand_dataset(&manifest, &cfg, &out.path().join("b"), false).unwrap();
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert_eq!(x.params, y.params);
            assert_eq!(fs::read(&x.path).unwrap(), fs::read(&y.path).unwrap());
        }

        let back = AugmentedManifest::read_csv(&out.path().join("a/augmented.csv")).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn expansion_refuses_occupied_dir() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        fs::write(out.path().join("junk"), b"x").unwrap();
        let manifest =
            DatasetManifest::new(write_sources(src.path(), 1, Diagnosis::Melanoma), "t").unwrap();
        let cfg = AugmentationConfig::default();
        assert!(matches!(
            expand_dataset(&manifest, &cfg, out.path(), false),
            Err(Error::OutputExists(_))
        ));
        assert!(expand_dataset(&manifest, &cfg, out.path(), true).is_ok());
    }

    #[test]
    fn expansion_names_unreadable_file() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let bad = src.path().join("broken.png");
        fs::write(&bad, b"garbage").unwrap();
        let manifest = DatasetManifest::new(
            vec![LesionRecord {
                image_id: "broken".into(),
                image_path: bad,
                diagnosis: Diagnosis::Nevus,
            }],
            "t",
        )
        .unwrap();
        let err = expand_dataset(&manifest, &AugmentationConfig::default(), &out.path().join("o"), false)
            .unwrap_err();
        assert!(err.to_string().contains("broken.png"));
    }
}
