use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// Operating points from the strictest threshold (`+inf`, nothing positive)
/// down to the lowest observed score (everything positive). Point `i` is the
/// result of predicting positive for `score >= thresholds[i]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub thresholds: Vec<f64>,
}

impl RocCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut body = String::from("threshold,fpr,tpr\n");
        for (t, p) in self.thresholds.iter().zip(&self.points) {
            body.push_str(&format!("{t},{},{}\n", p.fpr, p.tpr));
        }
        f.write_all(body.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn is_valid(&self) -> bool {
        let (Some(first), Some(last)) = (self.points.first(), self.points.last()) else {
            return false;
        };
        *first == (RocPoint { fpr: 0.0, tpr: 0.0 })
            && *last == (RocPoint { fpr: 1.0, tpr: 1.0 })
            && self.points.len() == self.thresholds.len()
            && self
                .points
                .windows(2)
                .all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr)
    }
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("score {s} is not a number")));
    }
    let pos = labels.iter().filter(|l| **l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined(format!(
            "ROC needs both classes ({pos} positive, {neg} negative)"
        )));
    }
    Ok((pos, neg))
}

/// Sweeps the distinct scores in descending order; tied scores move the
/// curve in a single (diagonal) step.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
        thresholds.push(t);
    }
    Ok(RocCurve { points, thresholds })
}

/// Trapezoidal area under the curve over FPR.
pub fn auc_trapezoid(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Mann-Whitney pair count: the share of (positive, negative) pairs in which
/// the positive scores higher, with ties worth half. Brute force over all
/// pairs; independent of the curve construction.
pub fn auc_pair_oracle(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let positives: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| **l).map(|(s, _)| *s).collect();
    let negatives: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| !**l).map(|(s, _)| *s).collect();
    // doubled so half-credit stays integral
    let mut doubled: u64 = 0;
    for p in &positives {
        for n in &negatives {
            if p > n {
                doubled += 2;
            } else if p == n {
                doubled += 1;
            }
        }
    }
    Ok(doubled as f64 / (2 * pos * neg) as f64)
}

/// Pairs score and label maps by key into parallel vectors.
pub fn align_scores(
    scores: &BTreeMap<String, f64>,
    labels: &BTreeMap<String, bool>,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if scores.len() != labels.len() || scores.keys().ne(labels.keys()) {
        let missing = labels.keys().find(|k| !scores.contains_key(*k));
        let extra = scores.keys().find(|k| !labels.contains_key(*k));
        return Err(Error::KeyMismatch(format!(
            "no score for {:?}, no label for {:?}",
            missing, extra
        )));
    }
    Ok((scores.values().copied().collect(), labels.values().copied().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: [f64; 4] = [0.9, 0.8, 0.4, 0.3];
    const L: [bool; 4] = [true, false, true, false];

    #[test]
    fn hand_enumerated_staircase() {
        let c = roc_curve(&S, &L).unwrap();
        let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]);
        assert_eq!(c.thresholds, vec![f64::INFINITY, 0.9, 0.8, 0.4, 0.3]);
        assert_eq!(auc_trapezoid(&c), 0.75);
        assert_eq!(auc_pair_oracle(&S, &L).unwrap(), 0.75);
    }

    #[test]
    fn perfect_separation() {
        let s = [0.9, 0.8, 0.2, 0.1];
        let l = [true, true, false, false];
        let c = roc_curve(&s, &l).unwrap();
        assert!(c.points.contains(&RocPoint { fpr: 0.0, tpr: 1.0 }));
        assert_eq!(auc_trapezoid(&c), 1.0);
        assert_eq!(auc_pair_oracle(&s, &l).unwrap(), 1.0);
    }

    #[test]
    fn all_equal_scores() {
        let s = [0.5; 6];
        let l = [true, false, true, false, false, true];
        let c = roc_curve(&s, &l).unwrap();
        assert_eq!(c.points.len(), 2);
        assert!(c.is_valid());
        assert_eq!(auc_trapezoid(&c), 0.5);
        assert_eq!(auc_pair_oracle(&s, &l).unwrap(), 0.5);
    }

    #[test]
    fn swapped_labels_complement() {
        let flipped: Vec<bool> = L.iter().map(|l| !l).collect();
        let a = auc_pair_oracle(&S, &L).unwrap();
        let b = auc_pair_oracle(&S, &flipped).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(roc_curve(&[0.1, 0.2], &[true, true]), Err(Error::Undefined(_))));
        assert!(auc_pair_oracle(&[0.1, 0.2], &[false, false]).is_err());
        assert!(roc_curve(&[f64::NAN, 0.2], &[true, false]).is_err());
    }
}
