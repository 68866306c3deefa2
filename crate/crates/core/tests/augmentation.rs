use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lesion_core::augment::{expand_dataset, plan_expansion, AugmentationConfig, AugmentedManifest};
use lesion_core::dataset::{class_histogram, DatasetManifest, Diagnosis, LesionRecord};
use lesion_core::raster::RasterImage;

fn sources(dir: &Path, counts: &[(Diagnosis, usize)]) -> DatasetManifest {
    let mut records = Vec::new();
    for (d, n) in counts {
        for i in 0..*n {
            let mut img = RasterImage::new(20 + (i % 7) as u32, 16).unwrap();
            for (j, v) in img.as_raw_mut().iter_mut().enumerate() {
                *v = ((i * 13 + j * 5) % 251) as u8;
            }
            let id = format!("{d}_{i:04}");
            let path = dir.join(format!("{id}.png"));
            img.save_png(&path).unwrap();
            records.push(LesionRecord {
                image_id: id,
                image_path: path,
                diagnosis: *d,
            });
        }
    }
    DatasetManifest::new(records, "src").unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect()
}

#[test]
fn expansion_is_bit_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    fs::create_dir(&src).unwrap();
    let m = sources(
        &src,
        &[(Diagnosis::Melanoma, 4), (Diagnosis::SeborrheicKeratosis, 3), (Diagnosis::Nevus, 12)],
    );
    let cfg = AugmentationConfig {
        seed: 42,
        ..Default::default()
    };
    let a = expand_dataset(&m, &cfg, &tmp.path().join("a"), false).unwrap();
    let b = expand_dataset(&m, &cfg, &tmp.path().join("b"), false).unwrap();
    let (fa, fb) = (files(&tmp.path().join("a")), files(&tmp.path().join("b")));
    assert_eq!(fa.len(), a.len() + 1);
    for (name, bytes) in &fa {
        if name != "augmented.csv" {
            assert_eq!(bytes, &fb[name], "{name}");
        }
    }
    assert_eq!(
        a.entries.iter().map(|e| (&e.image_id, e.copy_index, e.params)).collect::<Vec<_>>(),
        b.entries.iter().map(|e| (&e.image_id, e.copy_index, e.params)).collect::<Vec<_>>()
    );
    let back = AugmentedManifest::read_csv(&tmp.path().join("a/augmented.csv")).unwrap();
    assert_eq!(back.len(), a.len());

    // a different seed changes the augmented copies but not the originals
    let c = expand_dataset(
        &m,
        &AugmentationConfig { seed: 43, ..cfg.clone() },
        &tmp.path().join("c"),
        false,
    )
    .unwrap();
    assert_eq!(c.len(), a.len());
    let fc = files(&tmp.path().join("c"));
    assert_eq!(fa["melanoma_0000_aug0.png"], fc["melanoma_0000_aug0.png"]);
    assert_ne!(fa["melanoma_0000_aug1.png"], fc["melanoma_0000_aug1.png"]);

    // refusing to clobber without overwrite
    assert!(expand_dataset(&m, &cfg, &tmp.path().join("a"), false).is_err());
    assert!(expand_dataset(&m, &cfg, &tmp.path().join("a"), true).is_ok());
}

#[test]
fn isic_class_counts_expand_about_five_times_and_rebalance() {
    let counts: BTreeMap<Diagnosis, usize> = [
        (Diagnosis::Melanoma, 374),
        (Diagnosis::SeborrheicKeratosis, 254),
        (Diagnosis::Nevus, 1372),
    ]
    .into_iter()
    .collect();
    let plan = plan_expansion(&counts, &AugmentationConfig::default());
    let total = plan.total_output(&counts) as f64;
    assert!((4.5..=5.5).contains(&(total / 2000.0)));
    let before = 254.0 / 1372.0;
    let after = (254 * plan.factors[&Diagnosis::SeborrheicKeratosis]) as f64
        / (1372 * plan.factors[&Diagnosis::Nevus]) as f64;
    assert!(after > before);
}

#[test]
fn materialized_volume_matches_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    fs::create_dir(&src).unwrap();
    let m = sources(&src, &[(Diagnosis::Melanoma, 5), (Diagnosis::Nevus, 20)]);
    let cfg = AugmentationConfig::default();
    let out = expand_dataset(&m, &cfg, &tmp.path().join("out"), false).unwrap();
    let plan = plan_expansion(&class_histogram(&m), &cfg);
    assert_eq!(out.len(), plan.total_output(&class_histogram(&m)));
}
