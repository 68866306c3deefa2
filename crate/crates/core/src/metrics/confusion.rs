use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Binary confusion counts at a fixed decision threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted_positive: bool, actual_positive: bool) {
        match (predicted_positive, actual_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

/// A ratio of counts. A zero denominator is "not applicable" and never
/// collapses to 0.0.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Rate {
    pub numerator: u64,
    pub denominator: u64,
}

impl Rate {
    pub fn new(numerator: u64, denominator: u64) -> Rate {
        Rate {
            numerator,
            denominator,
        }
    }

    pub fn is_applicable(&self) -> bool {
        self.denominator != 0
    }

    pub fn value(&self) -> Option<f64> {
        self.is_applicable()
            .then(|| self.numerator as f64 / self.denominator as f64)
    }
}

/// Rational equality: 5/10 == 1/2; two not-applicable rates are equal.
impl PartialEq for Rate {
    fn eq(&self, other: &Rate) -> bool {
        match (self.is_applicable(), other.is_applicable()) {
            (true, true) => {
                u128::from(self.numerator) * u128::from(other.denominator)
                    == u128::from(other.numerator) * u128::from(self.denominator)
            }
            (false, false) => true,
            _ => false,
        }
    }
}

impl Eq for Rate {}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{v:.6}"),
            None => f.write_str("n/a"),
        }
    }
}

pub fn sensitivity(cm: &ConfusionMatrix) -> Rate {
    Rate::new(cm.tp, cm.tp + cm.fn_)
}

pub fn specificity(cm: &ConfusionMatrix) -> Rate {
    Rate::new(cm.tn, cm.tn + cm.fp)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Rate {
    Rate::new(cm.tp + cm.tn, cm.total())
}

/// Counts decisions under the rule `score >= threshold` means positive.
pub fn confusion_at_threshold(
    scores: &BTreeMap<String, f64>,
    labels: &BTreeMap<String, bool>,
    threshold: f64,
) -> Result<ConfusionMatrix> {
    if scores.len() != labels.len() || scores.keys().ne(labels.keys()) {
        return Err(Error::KeyMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for ((_, s), (_, y)) in scores.iter().zip(labels) {
        cm.record(*s >= threshold, *y);
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map<T: Copy>(pairs: &[(&str, T)]) -> BTreeMap<String, T> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn two_image_example() {
        let cm = confusion_at_threshold(
            &map(&[("a", 0.9), ("b", 0.2)]),
            &map(&[("a", true), ("b", false)]),
            0.5,
        )
        .unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, tn: 1, fp: 0, fn_: 0 });
    }

    #[test]
    fn all_scores_one_all_negative() {
        let scores = map(&[("a", 1.0), ("b", 1.0), ("c", 1.0)]);
        let labels = map(&[("a", false), ("b", false), ("c", false)]);
        let cm = confusion_at_threshold(&scores, &labels, 0.5).unwrap();
        assert_eq!(cm.fp, 3);
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn empty_and_mismatch() {
        let cm = confusion_at_threshold(&BTreeMap::new(), &BTreeMap::new(), 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix::default());
        assert!(confusion_at_threshold(&map(&[("a", 0.1)]), &map(&[("b", true)]), 0.5).is_err());
    }

    #[test]
    fn threshold_boundary_is_positive() {
        let cm = confusion_at_threshold(&map(&[("a", 0.5)]), &map(&[("a", true)]), 0.5).unwrap();
        assert_eq!(cm.tp, 1);
    }

    #[test]
    fn rates() {
        let cm = ConfusionMatrix { tp: 5, fn_: 5, tn: 93, fp: 7 };
        assert_eq!(sensitivity(&cm), Rate::new(1, 2));
        assert_eq!(specificity(&cm), Rate::new(93, 100));
        assert_eq!(specificity(&cm).value(), Some(0.93));
        let none = ConfusionMatrix { tn: 4, ..Default::default() };
        assert!(!sensitivity(&none).is_applicable());
        assert_eq!(sensitivity(&none).value(), None);
        assert_eq!(sensitivity(&none).to_string(), "n/a");
        assert_ne!(sensitivity(&none), Rate::new(0, 1));
    }
}
