use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enactor::PIConfig;
use crate::manager::SearchParams;
use crate::metrics::DEFAULT_STABILITY_MARGIN;

#[derive(Debug, Error, PartialEq)]
#[error("invalid goals: {0}")]
pub struct GoalsError(pub String);

/// Closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn check(&self, name: &str) -> Result<(), GoalsError> {
        if self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi {
            Ok(())
        } else {
            Err(GoalsError(format!(
                "{name} range [{}, {}] is degenerate",
                self.lo, self.hi
            )))
        }
    }
}

impl From<[f64; 2]> for Range {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.lo, r.hi]
    }
}

fn default_condition() -> f64 {
    0.001
}

/// What the system must achieve, plus the ranges tuning may explore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goals {
    pub property: String,
    pub setpoint: f64,
    pub stability_margin: f64,
    /// Dead band handed to the enactor with each strategy.
    #[serde(default = "default_condition")]
    pub condition: f64,
    pub gran: Range,
    pub offset: Range,
    pub kp: Range,
    pub ki: Range,
    pub iw: usize,
}

impl Default for Goals {
    fn default() -> Self {
        Self {
            property: "reliability".into(),
            setpoint: 0.95,
            stability_margin: DEFAULT_STABILITY_MARGIN,
            condition: default_condition(),
            gran: Range::new(0.05, 1.0),
            offset: Range::new(0.0, 1.0),
            kp: Range::new(60.0, 150.0),
            ki: Range::new(0.2, 1.0),
            iw: 5,
        }
    }
}

impl Goals {
    pub fn validate(&self) -> Result<(), GoalsError> {
        if !(self.setpoint > 0.0 && self.setpoint <= 1.0) {
            return Err(GoalsError(format!(
                "setpoint {} outside (0, 1]",
                self.setpoint
            )));
        }
        if !(self.stability_margin > 0.0) {
            return Err(GoalsError("stability margin must be positive".into()));
        }
        if !(self.condition >= 0.0) {
            return Err(GoalsError("condition must be non-negative".into()));
        }
        if self.iw == 0 {
            return Err(GoalsError("iw must be at least 1".into()));
        }
        self.gran.check("gran")?;
        self.offset.check("offset")?;
        self.kp.check("kp")?;
        self.ki.check("ki")?;
        Ok(())
    }

    pub fn check_search(&self, p: &SearchParams) -> Result<(), GoalsError> {
        for (name, r, v) in [
            ("gran", self.gran, p.gran),
            ("offset", self.offset, p.offset),
        ] {
            if !r.contains(v) {
                return Err(GoalsError(format!(
                    "{name} = {v} outside [{}, {}]",
                    r.lo, r.hi
                )));
            }
        }
        Ok(())
    }

    pub fn check_pi(&self, c: &PIConfig) -> Result<(), GoalsError> {
        for (name, r, v) in [("kp", self.kp, c.kp), ("ki", self.ki, c.ki)] {
            if !r.contains(v) {
                return Err(GoalsError(format!(
                    "{name} = {v} outside [{}, {}]",
                    r.lo, r.hi
                )));
            }
        }
        if c.iw == 0 {
            return Err(GoalsError("iw must be at least 1".into()));
        }
        Ok(())
    }

    /// Center of the gran and offset ranges.
    pub fn default_search(&self) -> SearchParams {
        SearchParams {
            gran: self.gran.midpoint(),
            offset: self.offset.midpoint(),
        }
    }
}
