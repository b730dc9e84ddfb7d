//! Strategy enforcement through a discrete PI controller with a finite
//! integral window.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Consecutive fully-saturated ticks before the enactor gives up.
pub const ESCALATION_PATIENCE: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum EnactorError {
    #[error("invalid PI configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("observed value is not finite: {0}")]
    NonFiniteObservation(f64),
    #[error("no knob named `{0}`")]
    UnknownKnob(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PIConfig {
    pub kp: f64,
    pub ki: f64,
    pub iw: usize,
}

impl PIConfig {
    pub fn new(kp: f64, ki: f64, iw: usize) -> Result<Self, EnactorError> {
        let c = Self { kp, ki, iw };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), EnactorError> {
        if self.iw < 1 {
            return Err(EnactorError::InvalidConfig("iw must be at least 1".into()));
        }
        if !self.kp.is_finite() || !self.ki.is_finite() {
            return Err(EnactorError::InvalidConfig(format!(
                "gains must be finite (kp={}, ki={})",
                self.kp, self.ki
            )));
        }
        Ok(())
    }
}

/// Ring of the most recent errors, oldest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PIState {
    history: VecDeque<f64>,
}

impl PIState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn history(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Records `error` without computing a control signal.
    pub fn record(&mut self, iw: usize, error: f64) {
        self.history.push_back(error);
        while self.history.len() > iw {
            self.history.pop_front();
        }
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }
}

/// `u = kp*e + ki * sum(last iw errors)`, with `error` pushed first.
pub fn control_signal(config: &PIConfig, state: &mut PIState, error: f64) -> f64 {
    state.record(config.iw, error);
    let integral: f64 = state.history.iter().sum();
    config.kp * error + config.ki * integral
}

pub fn reset(state: &mut PIState) {
    state.reset();
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub sensor: String,
    /// +1 or -1: direction of the rate change for a positive control signal.
    pub sign: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub property: String,
    pub goal: f64,
    pub condition: f64,
    pub actions: Vec<Action>,
}

impl Strategy {
    pub fn validate(&self) -> Result<(), EnactorError> {
        if !(self.goal > 0.0 && self.goal <= 1.0) {
            return Err(EnactorError::InvalidStrategy(format!(
                "goal {} outside (0, 1]",
                self.goal
            )));
        }
        if !(self.condition >= 0.0) {
            return Err(EnactorError::InvalidStrategy(format!(
                "condition {} is negative",
                self.condition
            )));
        }
        if self.actions.is_empty() {
            return Err(EnactorError::InvalidStrategy("no actions".into()));
        }
        Ok(())
    }

    /// One negative-sign action per sensor, splitting `total_scale` evenly.
    pub fn spread(
        property: &str,
        goal: f64,
        condition: f64,
        sensors: &[String],
        total_scale: f64,
    ) -> Self {
        let scale = total_scale / sensors.len().max(1) as f64;
        Self {
            property: property.to_string(),
            goal,
            condition,
            actions: sensors
                .iter()
                .map(|s| Action {
                    sensor: s.clone(),
                    sign: -1.0,
                    scale,
                })
                .collect(),
        }
    }
}

/// Current value and bounds of one actuated sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Knob {
    pub sensor: String,
    pub rate: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCommand {
    pub sensor: String,
    pub old_rate: f64,
    pub new_rate: f64,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Enactment {
    /// Inside the condition band; nothing to do.
    Hold,
    Adjust(Vec<RateCommand>),
    /// Every knob stayed pinned for the patience window; hand back to the manager.
    Escalate {
        error: f64,
    },
}

/// Owns the PI state for one strategy and tracks saturation.
#[derive(Debug, Clone)]
pub struct Enactor {
    config: PIConfig,
    state: PIState,
    patience: usize,
    saturated_ticks: usize,
}

impl Enactor {
    pub fn new(config: PIConfig) -> Result<Self, EnactorError> {
        config.validate()?;
        Ok(Self {
            config,
            state: PIState::new(),
            patience: ESCALATION_PATIENCE,
            saturated_ticks: 0,
        })
    }

    pub fn with_patience(mut self, patience: usize) -> Self {
        self.patience = patience.max(1);
        self
    }

    pub fn config(&self) -> &PIConfig {
        &self.config
    }

    pub fn state(&self) -> &PIState {
        &self.state
    }

    /// Takes effect on the next call; the error history is kept.
    pub fn set_config(&mut self, config: PIConfig) -> Result<(), EnactorError> {
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.state.reset();
        self.saturated_ticks = 0;
    }

    pub fn enact(
        &mut self,
        strategy: &Strategy,
        observed: f64,
        knobs: &[Knob],
    ) -> Result<Enactment, EnactorError> {
        if !observed.is_finite() {
            return Err(EnactorError::NonFiniteObservation(observed));
        }
        let error = strategy.goal - observed;
        if error.abs() <= strategy.condition {
            self.state.record(self.config.iw, error);
            self.saturated_ticks = 0;
            return Ok(Enactment::Hold);
        }

        let u = control_signal(&self.config, &mut self.state, error);
        let mut commands = Vec::with_capacity(strategy.actions.len());
        let mut all_saturated = true;
        for action in &strategy.actions {
            let knob = knobs
                .iter()
                .find(|k| k.sensor == action.sensor)
                .ok_or_else(|| EnactorError::UnknownKnob(action.sensor.clone()))?;
            let wanted = knob.rate + action.sign * action.scale * u;
            let new_rate = wanted.clamp(knob.min, knob.max);
            if wanted >= knob.min && wanted <= knob.max {
                all_saturated = false;
            }
            commands.push(RateCommand {
                sensor: knob.sensor.clone(),
                old_rate: knob.rate,
                new_rate,
                u,
            });
        }

        if all_saturated {
            self.saturated_ticks += 1;
            if self.saturated_ticks >= self.patience {
                self.saturated_ticks = 0;
                return Ok(Enactment::Escalate { error });
            }
        } else {
            self.saturated_ticks = 0;
        }
        Ok(Enactment::Adjust(commands))
    }
}
