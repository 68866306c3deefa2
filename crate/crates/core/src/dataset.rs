//! Ground-truth manifests, per-task labels and the stratified validation split.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const MANIFEST_HEADER: [&str; 3] = ["image_id", "melanoma", "seborrheic_keratosis"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Diagnosis {
    Melanoma,
    SeborrheicKeratosis,
    Nevus,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 3] = [
        Diagnosis::Melanoma,
        Diagnosis::SeborrheicKeratosis,
        Diagnosis::Nevus,
    ];

    /// Stable numeric id, used when mixing seeds per class.
    pub fn class_id(self) -> u64 {
        match self {
            Diagnosis::Melanoma => 0,
            Diagnosis::SeborrheicKeratosis => 1,
            Diagnosis::Nevus => 2,
        }
    }

    pub fn from_labels(melanoma: bool, sk: bool) -> Option<Diagnosis> {
        match (melanoma, sk) {
            (true, false) => Some(Diagnosis::Melanoma),
            (false, true) => Some(Diagnosis::SeborrheicKeratosis),
            (false, false) => Some(Diagnosis::Nevus),
            (true, true) => None,
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Diagnosis::Melanoma => "melanoma",
            Diagnosis::SeborrheicKeratosis => "seborrheic_keratosis",
            Diagnosis::Nevus => "nevus",
        })
    }
}

/// One of the two independent binary recognition tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "melanoma")]
    Melanoma,
    #[serde(rename = "sk")]
    SeborrheicKeratosis,
}

impl Task {
    pub fn positive_class(self) -> Diagnosis {
        match self {
            Task::Melanoma => Diagnosis::Melanoma,
            Task::SeborrheicKeratosis => Diagnosis::SeborrheicKeratosis,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Melanoma => "melanoma",
            Task::SeborrheicKeratosis => "sk",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "melanoma" | "mel" => Ok(Task::Melanoma),
            "sk" | "seborrheic_keratosis" | "seborrheic" => Ok(Task::SeborrheicKeratosis),
            other => Err(Error::InvalidArgument(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LesionRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub diagnosis: Diagnosis,
}

impl LesionRecord {
    pub fn melanoma_label(&self) -> u8 {
        u8::from(self.diagnosis == Diagnosis::Melanoma)
    }

    pub fn sk_label(&self) -> u8 {
        u8::from(self.diagnosis == Diagnosis::SeborrheicKeratosis)
    }

    pub fn label_for(&self, task: Task) -> bool {
        self.diagnosis == task.positive_class()
    }
}

/// An ordered list of records with unique image ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<LesionRecord>,
    pub source_tag: String,
}

impl DatasetManifest {
    pub fn new(records: Vec<LesionRecord>, source_tag: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate image_id {}",
                    r.image_id
                )));
            }
        }
        Ok(DatasetManifest {
            records,
            source_tag: source_tag.into(),
        })
    }

    pub fn empty(source_tag: impl Into<String>) -> Self {
        DatasetManifest {
            records: Vec::new(),
            source_tag: source_tag.into(),
        }
    }

    pub fn records(&self) -> &[LesionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.image_id.as_str())
    }

    pub fn get(&self, image_id: &str) -> Option<&LesionRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    /// Writes the manifest in the ground-truth CSV format.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(MANIFEST_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.image_id.as_str(),
                label_cell(r.melanoma_label()),
                label_cell(r.sk_label()),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }
}

fn label_cell(v: u8) -> &'static str {
    if v == 1 {
        "1.0"
    } else {
        "0.0"
    }
}

fn parse_label(cell: &str) -> Option<bool> {
    match cell.trim() {
        "0" | "0.0" => Some(false),
        "1" | "1.0" => Some(true),
        _ => None,
    }
}

/// Result of reading a ground-truth CSV. Rows whose image file is absent are
/// kept in the manifest and listed in `missing_images`.
#[derive(Debug, Clone)]
pub struct ManifestLoad {
    pub manifest: DatasetManifest,
    pub missing_images: Vec<PathBuf>,
}

/// Reads `image_id,melanoma,seborrheic_keratosis` rows. Image paths are
/// `image_root/{image_id}.{extension}`.
pub fn load_manifest(csv_path: &Path, image_root: &Path, extension: &str) -> Result<ManifestLoad> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(|e| Error::Parse {
            path: csv_path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?;

    let headers = reader.headers()?.clone();
    if headers.len() < 3 || headers.iter().take(3).ne(MANIFEST_HEADER) {
        return Err(Error::Parse {
            path: csv_path.to_path_buf(),
            line: 1,
            message: format!(
                "expected header {}, found {}",
                MANIFEST_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let ext = extension.trim_start_matches('.');
    let mut records = Vec::new();
    let mut missing = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            path: csv_path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: csv_path.to_path_buf(),
            line,
            message,
        };
        if row.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", row.len())));
        }
        let image_id = row[0].to_string();
        if image_id.is_empty() {
            return Err(parse_err("empty image_id".into()));
        }
        let mel = parse_label(&row[1])
            .ok_or_else(|| parse_err(format!("bad melanoma label {:?}", &row[1])))?;
        let sk = parse_label(&row[2])
            .ok_or_else(|| parse_err(format!("bad seborrheic_keratosis label {:?}", &row[2])))?;
        let diagnosis = Diagnosis::from_labels(mel, sk).ok_or_else(|| {
            Error::Validation(format!(
                "{}: line {line}: image {image_id} is labelled both melanoma and seborrheic keratosis",
                csv_path.display()
            ))
        })?;
        let image_path = if ext.is_empty() {
            image_root.join(&image_id)
        } else {
            image_root.join(format!("{image_id}.{ext}"))
        };
        if !image_path.is_file() {
            missing.push(image_path.clone());
        }
        records.push(LesionRecord {
            image_id,
            image_path,
            diagnosis,
        });
    }

    let tag = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ManifestLoad {
        manifest: DatasetManifest::new(records, tag)?,
        missing_images: missing,
    })
}

/// Counts per diagnosis; every diagnosis is present as a key.
pub fn class_histogram(manifest: &DatasetManifest) -> BTreeMap<Diagnosis, usize> {
    let mut hist: BTreeMap<Diagnosis, usize> = Diagnosis::ALL.iter().map(|d| (*d, 0)).collect();
    for r in manifest.records() {
        *hist.entry(r.diagnosis).or_default() += 1;
    }
    hist
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: DatasetManifest,
    pub validation: DatasetManifest,
    pub fraction: f64,
    pub seed: u64,
}

/// Number of validation records drawn from a class of `n` records.
pub fn validation_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round_ties_even() as usize
}

/// Per class, shuffles the class's records with a stream keyed by
/// `(seed, class)` and moves the first `round(fraction * n)` of them to the
/// validation side. Input order is preserved on both sides.
pub fn stratified_split(manifest: &DatasetManifest, fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if manifest.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty manifest".into()));
    }

    let mut in_validation = vec![false; manifest.len()];
    for class in Diagnosis::ALL {
        let mut members: Vec<usize> = manifest
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.diagnosis == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = validation_count(fraction, members.len());
        let mut rng = seed::rng_from(seed::mix(seed, &[class.class_id()]));
        members.shuffle(&mut rng);
        for &i in &members[..k] {
            in_validation[i] = true;
        }
    }

    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (r, is_val) in manifest.records().iter().zip(&in_validation) {
        if *is_val {
            val.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok(DatasetSplit {
        train: DatasetManifest {
            records: train,
            source_tag: format!("{}:train", manifest.source_tag),
        },
        validation: DatasetManifest {
            records: val,
            source_tag: format!("{}:val", manifest.source_tag),
        },
        fraction,
        seed,
    })
}

impl DatasetSplit {
    /// Writes `train.csv`, `val.csv` and `split.meta` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        self.train.write_csv(&dir.join("train.csv"))?;
        self.validation.write_csv(&dir.join("val.csv"))?;

        let mut meta = format!("fraction = {}\nseed = {}\n", self.fraction, self.seed);
        let train_h = class_histogram(&self.train);
        let val_h = class_histogram(&self.validation);
        for d in Diagnosis::ALL {
            meta.push_str(&format!("train.{d} = {}\n", train_h[&d]));
            meta.push_str(&format!("val.{d} = {}\n", val_h[&d]));
        }
        let path = dir.join("split.meta");
        fs::write(&path, meta).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub positive: bool,
}

/// A manifest relabelled for one binary task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskManifest {
    pub task: Task,
    pub records: Vec<TaskRecord>,
}

impl TaskManifest {
    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.positive).count()
    }

    pub fn negatives(&self) -> usize {
        self.records.len() - self.positives()
    }

    pub fn labels(&self) -> BTreeMap<String, bool> {
        self.records
            .iter()
            .map(|r| (r.image_id.clone(), r.positive))
            .collect()
    }
}

pub fn derive_task_manifest(manifest: &DatasetManifest, task: Task) -> TaskManifest {
    TaskManifest {
        task,
        records: manifest
            .records()
            .iter()
            .map(|r| TaskRecord {
                image_id: r.image_id.clone(),
                image_path: r.image_path.clone(),
                positive: r.label_for(task),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("gt.csv");
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    fn manifest_with(counts: [usize; 3]) -> DatasetManifest {
        let mut records = Vec::new();
        for (d, n) in Diagnosis::ALL.iter().zip(counts) {
            for i in 0..n {
                records.push(LesionRecord {
                    image_id: format!("{d}_{i:05}"),
                    image_path: PathBuf::from(format!("{d}_{i:05}.png")),
                    diagnosis: *d,
                });
            }
        }
        DatasetManifest::new(records, "test").unwrap()
    }

    #[test]
    fn loads_rows_and_derives_diagnosis() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_csv(
            dir.path(),
            "image_id,melanoma,seborrheic_keratosis\nISIC_0000000,1.0,0.0\nISIC_0000001,0.0,0.0\nISIC_0000003,0,1\n",
        );
        fs::write(dir.path().join("ISIC_0000000.jpg"), b"x").unwrap();
        let load = load_manifest(&csv, dir.path(), "jpg").unwrap();
        let recs = load.manifest.records();
        assert_eq!(recs[0].diagnosis, Diagnosis::Melanoma);
        assert_eq!((recs[0].melanoma_label(), recs[0].sk_label()), (1, 0));
        assert_eq!(recs[1].diagnosis, Diagnosis::Nevus);
        assert_eq!((recs[1].melanoma_label(), recs[1].sk_label()), (0, 0));
        assert_eq!(recs[2].diagnosis, Diagnosis::SeborrheicKeratosis);
        assert_eq!(recs[0].image_path, dir.path().join("ISIC_0000000.jpg"));
        assert_eq!(load.missing_images.len(), 2);
    }

    #[test]
    fn rejects_both_labels_set() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_csv(
            dir.path(),
            "image_id,melanoma,seborrheic_keratosis\nISIC_0000002,1.0,1.0\n",
        );
        assert!(matches!(
            load_manifest(&csv, dir.path(), "jpg"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn rejects_duplicates_and_bad_cells() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_csv(
            dir.path(),
            "image_id,melanoma,seborrheic_keratosis\na,1.0,0.0\na,0.0,0.0\n",
        );
        assert!(matches!(
            load_manifest(&csv, dir.path(), "jpg"),
            Err(Error::Validation(_))
        ));

        let csv = write_csv(
            dir.path(),
            "image_id,melanoma,seborrheic_keratosis\na,1.0,0.0\nb,0.5,0.0\n",
        );
        match load_manifest(&csv, dir.path(), "jpg") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let csv = write_csv(dir.path(), "id,mel,sk\na,1.0,0.0\n");
        assert!(matches!(
            load_manifest(&csv, dir.path(), "jpg"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn histogram_cases() {
        let h = class_histogram(&manifest_with([374, 254, 1372]));
        assert_eq!(h[&Diagnosis::Melanoma], 374);
        assert_eq!(h[&Diagnosis::SeborrheicKeratosis], 254);
        assert_eq!(h[&Diagnosis::Nevus], 1372);

        let h = class_histogram(&DatasetManifest::empty("e"));
        assert!(h.values().all(|c| *c == 0));
        assert_eq!(h.len(), 3);

        let h = class_histogram(&manifest_with([1, 1, 1]));
        assert!(h.values().all(|c| *c == 1));
    }

    #[test]
    fn split_counts_for_isic_distribution() {
        let m = manifest_with([374, 254, 1372]);
        let split = stratified_split(&m, 0.2, 17).unwrap();
        let h = class_histogram(&split.validation);
        assert_eq!(h[&Diagnosis::Melanoma], 75);
        assert_eq!(h[&Diagnosis::SeborrheicKeratosis], 51);
        assert_eq!(h[&Diagnosis::Nevus], 274);
        assert_eq!(split.train.len() + split.validation.len(), 2000);
    }

    #[test]
    fn split_single_class_halves() {
        let m = manifest_with([2, 0, 0]);
        let split = stratified_split(&m, 0.5, 3).unwrap();
        assert_eq!(split.train.len(), 1);
        assert_eq!(split.validation.len(), 1);
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let m = manifest_with([30, 30, 30]);
        let a = stratified_split(&m, 0.2, 9).unwrap();
        let b = stratified_split(&m, 0.2, 9).unwrap();
        let c = stratified_split(&m, 0.2, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.validation, c.validation);
    }

    #[test]
    fn split_preserves_order() {
        let m = manifest_with([10, 10, 10]);
        let split = stratified_split(&m, 0.3, 1).unwrap();
        let pos = |id: &str| m.records().iter().position(|r| r.image_id == id).unwrap();
        for side in [&split.train, &split.validation] {
            let idx: Vec<usize> = side.ids().map(pos).collect();
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn split_rejects_bad_fraction_and_empty() {
        let m = manifest_with([3, 3, 3]);
        for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(stratified_split(&m, f, 0).is_err());
        }
        assert!(stratified_split(&DatasetManifest::empty("e"), 0.2, 0).is_err());
    }

    #[test]
    fn task_manifest_counts() {
        let m = manifest_with([374, 254, 1372]);
        let mel = derive_task_manifest(&m, Task::Melanoma);
        assert_eq!((mel.positives(), mel.negatives()), (374, 1626));
        let sk = derive_task_manifest(&m, Task::SeborrheicKeratosis);
        assert_eq!((sk.positives(), sk.negatives()), (254, 1746));
        assert!(derive_task_manifest(&DatasetManifest::empty("e"), Task::Melanoma)
            .records
            .is_empty());
    }

    #[test]
    fn split_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with([5, 5, 10]);
        let split = stratified_split(&m, 0.2, 4).unwrap();
        split.write_to(dir.path()).unwrap();
        let back = load_manifest(&dir.path().join("val.csv"), Path::new(""), "png").unwrap();
        assert_eq!(
            back.manifest.ids().collect::<Vec<_>>(),
            split.validation.ids().collect::<Vec<_>>()
        );
        let meta = fs::read_to_string(dir.path().join("split.meta")).unwrap();
        assert!(meta.contains("fraction = 0.2"));
        assert!(meta.contains("val.nevus = 2"));
    }
}
