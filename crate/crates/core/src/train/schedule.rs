use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant learning-rate plan plus optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub total_epochs: u32,
    /// `(start inclusive, end exclusive, lr)`, in order.
    pub stages: Vec<(u32, u32, f64)>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;
pub const DEFAULT_BATCH_SIZE: usize = 32;

impl TrainingSchedule {
    /// Consecutive stages of the given lengths, default optimizer settings.
    pub fn from_stage_lengths(stages: &[(u32, f64)]) -> Result<TrainingSchedule> {
        let mut start = 0;
        let mut out = Vec::with_capacity(stages.len());
        for &(len, lr) in stages {
            out.push((start, start + len, lr));
            start += len;
        }
        let s = TrainingSchedule {
            total_epochs: start,
            stages: out,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            batch_size: DEFAULT_BATCH_SIZE,
        };
        s.validate()?;
        Ok(s)
    }

    /// Single stage with a constant rate.
    pub fn constant(epochs: u32, lr: f64) -> Result<TrainingSchedule> {
        Self::from_stage_lengths(&[(epochs, lr)])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.total_epochs == 0 || self.stages.is_empty() {
            return bad("schedule needs at least one epoch and one stage".into());
        }
        let mut expect = 0;
        for (i, &(start, end, lr)) in self.stages.iter().enumerate() {
            if start != expect || end <= start {
                return bad(format!("stage {i} [{start}, {end}) does not continue from epoch {expect}"));
            }
            if !(lr >= 0.0) || !lr.is_finite() {
                return bad(format!("stage {i} learning rate {lr} is not a finite non-negative number"));
            }
            if i > 0 && !(lr < self.stages[i - 1].2) {
                return bad(format!("stage {i} learning rate {lr} does not decrease"));
            }
            expect = end;
        }
        if expect != self.total_epochs {
            return bad(format!("stages end at {expect}, schedule has {} epochs", self.total_epochs));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        Ok(())
    }

    /// Same stage structure with each stage shortened to `ceil(len / divisor)`
    /// epochs and every rate multiplied by `lr_scale`.
    pub fn compressed(&self, divisor: u32, lr_scale: f64) -> Result<TrainingSchedule> {
        if divisor == 0 || !(lr_scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bad compression divisor {divisor} / lr scale {lr_scale}"
            )));
        }
        let lens: Vec<(u32, f64)> = self
            .stages
            .iter()
            .map(|&(s, e, lr)| ((e - s).div_ceil(divisor), lr * lr_scale))
            .collect();
        let mut out = Self::from_stage_lengths(&lens)?;
        out.momentum = self.momentum;
        out.weight_decay = self.weight_decay;
        out.batch_size = self.batch_size;
        Ok(out)
    }
}

/// Learning rate in effect during `epoch`.
pub fn lr_at_epoch(schedule: &TrainingSchedule, epoch: u32) -> Result<f64> {
    schedule
        .stages
        .iter()
        .find(|(s, e, _)| (*s..*e).contains(&epoch))
        .map(|s| s.2)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "epoch {epoch} outside schedule of {} epochs",
                schedule.total_epochs
            ))
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScheduleId {
    #[serde(rename = "sk_alexnet350")]
    SkAlexNet350,
    #[serde(rename = "mel_googlenet256")]
    MelGoogleNet256,
    #[serde(rename = "mel_googlenet224")]
    MelGoogleNet224,
    #[serde(rename = "mel_alexnet224")]
    MelAlexNet224,
}

impl ScheduleId {
    pub const ALL: [ScheduleId; 4] = [
        ScheduleId::SkAlexNet350,
        ScheduleId::MelGoogleNet256,
        ScheduleId::MelGoogleNet224,
        ScheduleId::MelAlexNet224,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleId::SkAlexNet350 => "sk_alexnet350",
            ScheduleId::MelGoogleNet256 => "mel_googlenet256",
            ScheduleId::MelGoogleNet224 => "mel_googlenet224",
            ScheduleId::MelAlexNet224 => "mel_alexnet224",
        }
    }
}

impl fmt::Display for ScheduleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown schedule id {s:?}")))
    }
}

pub fn make_paper_schedule(id: ScheduleId) -> TrainingSchedule {
    let stages: &[(u32, f64)] = match id {
        ScheduleId::SkAlexNet350 | ScheduleId::MelAlexNet224 => &[(10, 0.001), (10, 0.0001), (10, 0.00001)],
        ScheduleId::MelGoogleNet256 => &[(24, 0.001), (24, 0.0001), (24, 0.00001)],
        ScheduleId::MelGoogleNet224 => &[
            (10, 0.005),
            (10, 0.0025),
            (10, 0.00125),
            (10, 0.000625),
            (10, 0.0003125),
        ],
    };
    TrainingSchedule::from_stage_lengths(stages).expect("built-in schedules are valid")
}
