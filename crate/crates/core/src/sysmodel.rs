//! Seeded simulation of a body sensor network: sensors with adjustable
//! sampling rates feed a capacity-limited hub, and sensors fail at random.
//!
//! One tick is one controller period. Failed sensors forward nothing that
//! tick. Reliabilities per tick:
//!
//! * sensor `i`: `1 - failure_probability_i`
//! * hub (`rproc`): `min(1, capacity / max(arrivals, 1e-9))`

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::{Binding, FormulaError, ParametricFormula};

pub const PROCESSOR_VAR: &str = "rproc";
const ARRIVAL_FLOOR: f64 = 1e-9;

/// Stand-in composition used when no formula file is given: the hub must
/// process the data and at least one sensor must be up.
pub const DEFAULT_FORMULA: &str = "rproc * (1 - (1 - therm) * (1 - oxi) * (1 - ecg))";

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("unknown sensor `{0}`")]
    UnknownSensor(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Formula(#[from] FormulaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: String,
    /// Initial sampling rate, messages per tick.
    pub rate: f64,
    pub rate_min: f64,
    pub rate_max: f64,
    pub failure_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureChange {
    Set(f64),
    Delta(f64),
}

/// Changes one sensor's failure probability for ticks `start..end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub sensor: String,
    pub start: u64,
    pub end: u64,
    pub change: FailureChange,
}

impl Disturbance {
    pub fn active_at(&self, tick: u64) -> bool {
        tick >= self.start && tick < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub ticks: u64,
    pub capacity: f64,
    #[serde(default)]
    pub initial_queue: f64,
    /// Rate change every sensor applies to itself each tick.
    #[serde(default)]
    pub rate_drift: f64,
    /// Ticks averaged by the reliability monitor.
    pub monitor_window: usize,
    /// Rate change per unit of control signal, split across sensors.
    pub actuation_scale: f64,
    pub sensors: Vec<SensorSpec>,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
}

impl ScenarioConfig {
    /// Three sensors flooding a hub of capacity 120, with a failure burst
    /// on the thermometer mid-run.
    pub fn bsn_default() -> Self {
        let sensor = |id: &str| SensorSpec {
            id: id.to_string(),
            rate: 43.0,
            rate_min: 1.0,
            rate_max: 100.0,
            failure_probability: 0.02,
        };
        Self {
            name: "bsn-flood".into(),
            seed: 1,
            ticks: 1000,
            capacity: 120.0,
            initial_queue: 0.0,
            rate_drift: 0.0,
            monitor_window: 20,
            actuation_scale: 0.3,
            sensors: vec![sensor("therm"), sensor("oxi"), sensor("ecg")],
            disturbances: vec![Disturbance {
                sensor: "therm".into(),
                start: 400,
                end: 600,
                change: FailureChange::Set(0.1),
            }],
        }
    }

    pub fn sensor_ids(&self) -> Vec<String> {
        self.sensors.iter().map(|s| s.id.clone()).collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.sensors.is_empty() {
            return bad("no sensors".into());
        }
        if !(self.capacity > 0.0) {
            return bad(format!("capacity must be positive, got {}", self.capacity));
        }
        if !(self.initial_queue >= 0.0) {
            return bad("initial queue must be non-negative".into());
        }
        if self.monitor_window == 0 {
            return bad("monitor window must be at least 1".into());
        }
        if !self.rate_drift.is_finite() || !self.actuation_scale.is_finite() {
            return bad("drift and actuation scale must be finite".into());
        }
        for s in &self.sensors {
            if !(0.0 <= s.rate_min && s.rate_min <= s.rate_max) {
                return bad(format!("sensor {}: bad rate bounds", s.id));
            }
            if !(s.rate_min..=s.rate_max).contains(&s.rate) {
                return bad(format!("sensor {}: rate {} outside bounds", s.id, s.rate));
            }
            if !(0.0..=1.0).contains(&s.failure_probability) {
                return bad(format!(
                    "sensor {}: failure probability outside [0, 1]",
                    s.id
                ));
            }
            if s.id == PROCESSOR_VAR {
                return bad(format!("sensor id `{PROCESSOR_VAR}` is reserved"));
            }
        }
        for d in &self.disturbances {
            if !self.sensors.iter().any(|s| s.id == d.sensor) {
                return Err(SimError::UnknownSensor(d.sensor.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorState {
    pub id: String,
    pub sampling_rate: f64,
    pub rate_min: f64,
    pub rate_max: f64,
    pub baseline_failure: f64,
    /// Probability in effect at the most recent tick.
    pub failure_probability: f64,
    /// False if the sensor failed at the most recent tick.
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessorState {
    pub capacity: f64,
    pub queue_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetRate {
    pub sensor: String,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    pub tick: u64,
    pub reliabilities: Binding,
    pub messages_sent: f64,
    pub messages_processed: f64,
    pub queue_length: f64,
}

impl Telemetry {
    pub fn processor_reliability(&self) -> f64 {
        self.reliabilities.get(PROCESSOR_VAR).unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub tick: u64,
    pub sensors: Vec<SensorState>,
    pub processor: ProcessorState,
    pub rate_drift: f64,
    disturbances: Vec<Disturbance>,
}

impl SystemState {
    pub fn from_scenario(scenario: &ScenarioConfig) -> Result<Self, SimError> {
        scenario.validate()?;
        Ok(Self {
            tick: 0,
            sensors: scenario
                .sensors
                .iter()
                .map(|s| SensorState {
                    id: s.id.clone(),
                    sampling_rate: s.rate,
                    rate_min: s.rate_min,
                    rate_max: s.rate_max,
                    baseline_failure: s.failure_probability,
                    failure_probability: s.failure_probability,
                    active: true,
                })
                .collect(),
            processor: ProcessorState {
                capacity: scenario.capacity,
                queue_length: scenario.initial_queue,
            },
            rate_drift: scenario.rate_drift,
            disturbances: scenario.disturbances.clone(),
        })
    }

    pub fn disturbances(&self) -> &[Disturbance] {
        &self.disturbances
    }

    pub fn total_rate(&self) -> f64 {
        self.sensors.iter().map(|s| s.sampling_rate).sum()
    }

    fn sensor_index(&self, id: &str) -> Result<usize, SimError> {
        self.sensors
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| SimError::UnknownSensor(id.to_string()))
    }

    /// Failure probability of sensor `idx` at `tick`, after disturbances.
    pub fn failure_probability_at(&self, idx: usize, tick: u64) -> f64 {
        let s = &self.sensors[idx];
        let mut p = s.baseline_failure;
        for d in self
            .disturbances
            .iter()
            .filter(|d| d.sensor == s.id && d.active_at(tick))
        {
            p = match d.change {
                FailureChange::Set(v) => v,
                FailureChange::Delta(dv) => p + dv,
            };
        }
        p.clamp(0.0, 1.0)
    }

    /// Adds windowed failure changes to the schedule. Each change lapses
    /// when its window ends.
    pub fn inject_disturbance(&mut self, spec: &[Disturbance]) -> Result<(), SimError> {
        for d in spec {
            self.sensor_index(&d.sensor)?;
        }
        self.disturbances.extend(spec.iter().cloned());
        let tick = self.tick;
        for i in 0..self.sensors.len() {
            self.sensors[i].failure_probability = self.failure_probability_at(i, tick);
        }
        Ok(())
    }

    /// Advances one tick: commands, drift, failures, then the hub.
    pub fn advance<R: Rng + ?Sized>(
        &mut self,
        commands: &[SetRate],
        rng: &mut R,
    ) -> Result<Telemetry, SimError> {
        let idx: Vec<usize> = commands
            .iter()
            .map(|c| self.sensor_index(&c.sensor))
            .collect::<Result<_, _>>()?;
        for (c, i) in commands.iter().zip(idx) {
            let s = &mut self.sensors[i];
            s.sampling_rate = c.rate.clamp(s.rate_min, s.rate_max);
        }

        let tick = self.tick;
        let mut arrivals = 0.0;
        let mut reliabilities = Binding::new();
        for i in 0..self.sensors.len() {
            let p = self.failure_probability_at(i, tick);
            let drift = self.rate_drift;
            let s = &mut self.sensors[i];
            s.sampling_rate = (s.sampling_rate + drift).clamp(s.rate_min, s.rate_max);
            s.failure_probability = p;
            // one draw per sensor per tick keeps the stream aligned across runs
            let draw: f64 = rng.gen();
            s.active = draw >= p;
            if s.active {
                arrivals += s.sampling_rate;
            }
            reliabilities.set(s.id.as_str(), 1.0 - p)?;
        }

        let cap = self.processor.capacity;
        let backlog = arrivals + self.processor.queue_length;
        let processed = backlog.min(cap);
        self.processor.queue_length = backlog - processed;
        let r_proc = (cap / arrivals.max(ARRIVAL_FLOOR)).min(1.0);
        reliabilities.set(PROCESSOR_VAR, r_proc)?;

        self.tick += 1;
        Ok(Telemetry {
            tick,
            reliabilities,
            messages_sent: arrivals,
            messages_processed: processed,
            queue_length: self.processor.queue_length,
        })
    }
}

/// Functional form of [`SystemState::advance`].
pub fn step<R: Rng + ?Sized>(
    state: &SystemState,
    commands: &[SetRate],
    rng: &mut R,
) -> Result<(SystemState, Telemetry), SimError> {
    let mut next = state.clone();
    let t = next.advance(commands, rng)?;
    Ok((next, t))
}

pub fn inject_disturbance(
    state: &SystemState,
    spec: &[Disturbance],
) -> Result<SystemState, SimError> {
    let mut next = state.clone();
    next.inject_disturbance(spec)?;
    Ok(next)
}

/// Formula value over the telemetry's reliabilities, clamped to [0, 1].
pub fn global_reliability(
    telemetry: &Telemetry,
    formula: &ParametricFormula,
) -> Result<f64, SimError> {
    reliability_of(&telemetry.reliabilities, formula)
}

pub fn reliability_of(binding: &Binding, formula: &ParametricFormula) -> Result<f64, SimError> {
    Ok(formula.evaluate(binding)?.clamp(0.0, 1.0))
}

/// Smooths the hub reliability over a sliding window of ticks, weighting
/// each tick by its arrivals: the fraction of recent traffic the hub kept up with.
#[derive(Debug, Clone)]
pub struct ReliabilityMonitor {
    window: usize,
    ticks: VecDeque<(f64, f64)>,
}

impl ReliabilityMonitor {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            ticks: VecDeque::new(),
        }
    }

    /// Starts with a full window of ticks at `arrivals` per tick.
    pub fn primed(window: usize, arrivals: f64, capacity: f64) -> Self {
        let mut m = Self::new(window);
        let kept = arrivals.min(capacity);
        m.ticks
            .extend(std::iter::repeat((arrivals, kept)).take(m.window));
        m
    }

    pub fn for_state(scenario: &ScenarioConfig, state: &SystemState) -> Self {
        Self::primed(
            scenario.monitor_window,
            state.total_rate(),
            state.processor.capacity,
        )
    }

    /// Returns the telemetry's reliabilities with `rproc` replaced by the
    /// windowed value.
    pub fn observe(&mut self, telemetry: &Telemetry) -> Result<Binding, SimError> {
        let a = telemetry.messages_sent;
        self.ticks
            .push_back((a, a * telemetry.processor_reliability()));
        while self.ticks.len() > self.window {
            self.ticks.pop_front();
        }
        let (sent, kept) = self
            .ticks
            .iter()
            .fold((0.0, 0.0), |acc, t| (acc.0 + t.0, acc.1 + t.1));
        let r = if sent > 0.0 {
            (kept / sent).min(1.0)
        } else {
            1.0
        };
        let mut b = telemetry.reliabilities.clone();
        b.set(PROCESSOR_VAR, r)?;
        Ok(b)
    }
}
