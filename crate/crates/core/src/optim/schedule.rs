//! Learning-rate schedules keyed by central epoch.

use serde::{Deserialize, Serialize};

use super::OptimError;

/// Constant rate, or piecewise-constant over inclusive central-epoch ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LrSchedule {
    Constant(f64),
    Piecewise(Vec<LrRange>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrRange {
    pub from: u32,
    pub to: u32,
    pub alpha: f64,
}

impl LrSchedule {
    pub fn constant(alpha: f64) -> Self {
        LrSchedule::Constant(alpha)
    }

    pub fn piecewise(ranges: Vec<(u32, u32, f64)>) -> Self {
        LrSchedule::Piecewise(
            ranges.into_iter().map(|(from, to, alpha)| LrRange { from, to, alpha }).collect(),
        )
    }

    /// All rates positive; piecewise ranges well-formed and disjoint.
    pub fn validate(&self) -> Result<(), OptimError> {
        match self {
            LrSchedule::Constant(alpha) => {
                if *alpha <= 0.0 {
                    return Err(OptimError::InvalidSchedule(format!(
                        "learning rate {alpha} must be positive"
                    )));
                }
            }
            LrSchedule::Piecewise(ranges) => {
                if ranges.is_empty() {
                    return Err(OptimError::InvalidSchedule("empty piecewise schedule".into()));
                }
                let mut sorted = ranges.clone();
                sorted.sort_by_key(|r| r.from);
                for r in &sorted {
                    if r.alpha <= 0.0 {
                        return Err(OptimError::InvalidSchedule(format!(
                            "learning rate {} must be positive",
                            r.alpha
                        )));
                    }
                    if r.to < r.from {
                        return Err(OptimError::InvalidSchedule(format!(
                            "range [{}, {}] is inverted",
                            r.from, r.to
                        )));
                    }
                }
                for pair in sorted.windows(2) {
                    if pair[1].from <= pair[0].to {
                        return Err(OptimError::InvalidSchedule(format!(
                            "ranges [{}, {}] and [{}, {}] overlap",
                            pair[0].from, pair[0].to, pair[1].from, pair[1].to
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rate in effect at `central_epoch`.
pub fn lr_at(schedule: &LrSchedule, central_epoch: u32) -> Result<f64, OptimError> {
    match schedule {
        LrSchedule::Constant(alpha) => Ok(*alpha),
        LrSchedule::Piecewise(ranges) => ranges
            .iter()
            .find(|r| (r.from..=r.to).contains(&central_epoch))
            .map(|r| r.alpha)
            .ok_or(OptimError::EpochOutOfRange { epoch: central_epoch }),
    }
}
