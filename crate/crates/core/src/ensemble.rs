//! Per-image prediction sets and arithmetic-mean fusion of softmax outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{Task, TaskManifest};
use crate::error::{Error, Result};
use crate::nn::{ModelState, SoftmaxOutput};
use crate::raster::RasterImage;

pub const PREDICTION_HEADER: &str = "image_id,score";
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub task: Task,
    pub entries: BTreeMap<String, SoftmaxOutput>,
    pub source: String,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Positive-class probability per image.
    pub fn scores(&self) -> BTreeMap<String, f64> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), v.positive()))
            .collect()
    }

    /// `image_id,score` rows with six decimals, ordered by image id.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(PREDICTION_HEADER);
        out.push('\n');
        for (id, p) in &self.entries {
            let _ = writeln!(out, "{id},{:.6}", p.positive());
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Reads a two-class prediction CSV; each score becomes `[1 - s, s]`.
    pub fn read_csv(path: &Path, task: Task) -> Result<PredictionSet> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        if r.headers()?.iter().ne(PREDICTION_HEADER.split(',')) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("expected header {PREDICTION_HEADER}"),
            });
        }
        let mut entries = BTreeMap::new();
        for row in r.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let err = |m: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: m,
            };
            if row.len() != 2 {
                return Err(err(format!("expected 2 fields, found {}", row.len())));
            }
            let s: f64 = row[1]
                .parse()
                .map_err(|_| err(format!("bad score {:?}", &row[1])))?;
            let out = SoftmaxOutput::binary(s).map_err(|e| err(e.to_string()))?;
            if entries.insert(row[0].to_string(), out).is_some() {
                return Err(err(format!("duplicate image_id {}", &row[0])));
            }
        }
        let source = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(PredictionSet {
            task,
            entries,
            source,
        })
    }
}

/// Runs deterministic inference over every image of `manifest`.
pub fn predict_dataset(model: &ModelState, manifest: &TaskManifest) -> Result<PredictionSet> {
    const CHUNK: usize = 32;
    let mut entries = BTreeMap::new();
    for chunk in manifest.records.chunks(CHUNK) {
        let images: Vec<RasterImage> = chunk
            .par_iter()
            .map(|r| {
                let img = RasterImage::open(&r.image_path)?;
                model.spec.prepare_eval(&img)
            })
            .collect::<Result<_>>()?;
        let outputs = model.forward_softmax(&images)?;
        for (r, o) in chunk.iter().zip(outputs) {
            entries.insert(r.image_id.clone(), o);
        }
    }
    Ok(PredictionSet {
        task: manifest.task,
        entries,
        source: model.model_id(),
    })
}

/// Mean of `values`, independent of their order, exact for equal inputs and
/// never outside `[min, max]`.
fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for &v in values.iter() {
        // two-sum
        let s = hi + v;
        let bp = s - hi;
        let err = (hi - (s - bp)) + (v - bp);
        hi = s;
        lo += err;
    }
    let n = values.len() as f64;
    let q = hi / n;
    let r = (-q).mul_add(n, hi) + lo;
    let mean = q + r / n;
    mean.clamp(values[0], values[values.len() - 1])
}

/// Componentwise arithmetic mean of softmax vectors per image.
pub fn ensemble_mean(sets: &[PredictionSet]) -> Result<PredictionSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::InvalidArgument("ensemble of zero prediction sets".into()))?;
    for s in &sets[1..] {
        if s.task != first.task {
            return Err(Error::InvalidArgument(format!(
                "task mismatch: {} vs {}",
                first.task, s.task
            )));
        }
        if s.entries.len() != first.entries.len() || s.entries.keys().ne(first.entries.keys()) {
            return Err(Error::KeyMismatch(format!(
                "prediction sets {} and {} cover different images",
                first.source, s.source
            )));
        }
    }
    if sets.len() == 1 {
        return Ok(PredictionSet {
            source: "ensemble".into(),
            ..first.clone()
        });
    }

    let mut entries = BTreeMap::new();
    let mut column = vec![0.0; sets.len()];
    for (id, p0) in &first.entries {
        let k = p0.probabilities().len();
        let mut fused = Vec::with_capacity(k);
        for c in 0..k {
            for (slot, s) in column.iter_mut().zip(sets) {
                let probs = s.entries[id].probabilities();
                if probs.len() != k {
                    return Err(Error::Shape(format!(
                        "{id}: {} classes in {} vs {k} in {}",
                        probs.len(),
                        s.source,
                        first.source
                    )));
                }
                *slot = probs[c];
            }
            fused.push(stable_mean(&mut column));
        }
        entries.insert(id.clone(), SoftmaxOutput::from_probabilities_unchecked(fused));
    }
    Ok(PredictionSet {
        task: first.task,
        entries,
        source: "ensemble".into(),
    })
}

/// Positive iff the positive-class probability is at least `threshold`.
pub fn threshold_decision(pred: &SoftmaxOutput, threshold: f64) -> bool {
    pred.positive() >= threshold
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pairs: &[(&str, [f64; 2])], source: &str) -> PredictionSet {
        PredictionSet {
            task: Task::Melanoma,
            entries: pairs
                .iter()
                .map(|(k, v)| (k.to_string(), SoftmaxOutput::new(v.to_vec()).unwrap()))
                .collect(),
            source: source.into(),
        }
    }

    #[test]
    fn worked_mean() {
        let fused = ensemble_mean(&[
            set(&[("img", [0.9, 0.1])], "a"),
            set(&[("img", [0.6, 0.4])], "b"),
            set(&[("img", [0.3, 0.7])], "c"),
        ])
        .unwrap();
        assert_eq!(fused.entries["img"].probabilities(), &[0.6, 0.4]);
        assert_eq!(fused.source, "ensemble");
    }

    #[test]
    fn identical_sets_fuse_to_themselves() {
        let s = set(&[("a", [0.7, 0.3]), ("b", [0.1, 0.9])], "m");
        let fused = ensemble_mean(&[s.clone(), s.clone(), s.clone()]).unwrap();
        assert_eq!(fused.entries, s.entries);
        assert_eq!(ensemble_mean(std::slice::from_ref(&s)).unwrap().entries, s.entries);
    }

    #[test]
    fn mismatches_rejected() {
        let a = set(&[("a", [0.5, 0.5])], "a");
        let b = set(&[("b", [0.5, 0.5])], "b");
        assert!(matches!(ensemble_mean(&[a.clone(), b]), Err(Error::KeyMismatch(_))));
        let mut c = a.clone();
        c.task = Task::SeborrheicKeratosis;
        assert!(ensemble_mean(&[a, c]).is_err());
        assert!(ensemble_mean(&[]).is_err());
    }

    #[test]
    fn threshold_rule() {
        let p = |v: [f64; 2]| SoftmaxOutput::new(v.to_vec()).unwrap();
        assert!(threshold_decision(&p([0.4, 0.6]), 0.5));
        assert!(threshold_decision(&p([0.5, 0.5]), 0.5));
        assert!(!threshold_decision(&p([0.51, 0.49]), 0.5));
    }

    #[test]
    fn csv_round_trip_at_six_decimals() {
        let dir = tempfile::tempdir().unwrap();
        let s = set(&[("ISIC_1", [0.25, 0.75]), ("ISIC_0", [0.9, 0.1])], "m");
        let p = dir.path().join("m.csv");
        s.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "image_id,score\nISIC_0,0.100000\nISIC_1,0.750000\n");
        let back = PredictionSet::read_csv(&p, Task::Melanoma).unwrap();
        assert_eq!(back.to_csv_string(), text);
    }

    #[test]
    fn stable_mean_properties() {
        let mut v = [0.1, 0.1, 0.1];
        assert_eq!(stable_mean(&mut v), 0.1);
        let mut a = [0.3, 0.9, 0.6];
        let mut b = [0.9, 0.6, 0.3];
        assert_eq!(stable_mean(&mut a), stable_mean(&mut b));
    }
}
