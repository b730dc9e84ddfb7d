//! Runs the managed system under the enactor for a fixed number of ticks.
//!
//! Per tick: apply pending rate commands and step the system, smooth the
//! hub reliability, evaluate the formula, then let the enactor decide the
//! commands for the next tick. The manager synthesizes a strategy after the
//! first tick and again on every escalation.

use std::sync::Mutex;

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enactor::{Enactment, Enactor, EnactorError, Knob, PIConfig, Strategy};
use crate::formula::{Binding, FormulaError, ParametricFormula};
use crate::goals::{Goals, GoalsError};
use crate::manager::{search_for_strategy, SearchParams};
use crate::metrics::{compute_metrics, ControlMetrics, MetricsError, ResponseSeries};
use crate::sysmodel::{
    reliability_of, ReliabilityMonitor, ScenarioConfig, SetRate, SimError, SystemState,
    PROCESSOR_VAR,
};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Enactor(#[from] EnactorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Goals(#[from] GoalsError),
    #[error(transparent)]
    Formula(#[from] FormulaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub pi: PIConfig,
    pub search: SearchParams,
}

/// Configuration shared between a running loop and whoever retunes it.
/// The loop takes one snapshot per tick, so a swap never lands mid-tick.
#[derive(Debug)]
pub struct LiveConfig {
    inner: Mutex<LoopConfig>,
}

impl LiveConfig {
    pub fn new(config: LoopConfig) -> Self {
        Self {
            inner: Mutex::new(config),
        }
    }

    pub fn snapshot(&self) -> LoopConfig {
        *self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn update(&self, f: impl FnOnce(&mut LoopConfig)) {
        let mut guard = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        f(&mut guard);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub tick: u64,
    pub sensor: String,
    pub old_rate: f64,
    pub new_rate: f64,
    pub u: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub series: ResponseSeries,
    pub metrics: ControlMetrics,
    pub commands: Vec<CommandRecord>,
    /// Ticks on which the enactor issued rate commands.
    pub adaptations: usize,
    pub escalations: usize,
    pub syntheses: usize,
    pub synthesis_failures: usize,
    pub strategy: Strategy,
    pub final_config: LoopConfig,
}

fn knobs(state: &SystemState) -> Vec<Knob> {
    state
        .sensors
        .iter()
        .map(|s| Knob {
            sensor: s.id.clone(),
            rate: s.sampling_rate,
            min: s.rate_min,
            max: s.rate_max,
        })
        .collect()
}

fn check_bindable(scenario: &ScenarioConfig, formula: &ParametricFormula) -> Result<(), LoopError> {
    for v in formula.variables() {
        if v != PROCESSOR_VAR && !scenario.sensors.iter().any(|s| &s.id == v) {
            return Err(FormulaError::UnboundVariable(v.clone()).into());
        }
    }
    Ok(())
}

/// The manager's view after the first tick of a seeded run: the binding it
/// would search from.
pub fn initial_binding(scenario: &ScenarioConfig, seed: u64) -> Result<Binding, LoopError> {
    let mut state = SystemState::from_scenario(scenario)?;
    let mut monitor = ReliabilityMonitor::for_state(scenario, &state);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let telemetry = state.advance(&[], &mut rng)?;
    Ok(monitor.observe(&telemetry)?)
}

pub fn run_closed_loop(
    scenario: &ScenarioConfig,
    formula: &ParametricFormula,
    goals: &Goals,
    config: LoopConfig,
    seed: u64,
) -> Result<RunOutcome, LoopError> {
    run_closed_loop_live(scenario, formula, goals, &LiveConfig::new(config), seed)
}

pub fn run_closed_loop_live(
    scenario: &ScenarioConfig,
    formula: &ParametricFormula,
    goals: &Goals,
    live: &LiveConfig,
    seed: u64,
) -> Result<RunOutcome, LoopError> {
    goals.validate()?;
    check_bindable(scenario, formula)?;
    let mut state = SystemState::from_scenario(scenario)?;
    let mut monitor = ReliabilityMonitor::for_state(scenario, &state);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut config = live.snapshot();
    let mut enactor = Enactor::new(config.pi)?;
    let strategy = Strategy::spread(
        &goals.property,
        goals.setpoint,
        goals.condition,
        &scenario.sensor_ids(),
        scenario.actuation_scale,
    );
    strategy.validate()?;

    let mut samples = Vec::with_capacity(scenario.ticks as usize);
    let mut commands = Vec::new();
    let mut pending: Vec<SetRate> = Vec::new();
    let (mut adaptations, mut escalations, mut syntheses, mut synthesis_failures) = (0, 0, 0, 0);

    for t in 0..scenario.ticks {
        let snap = live.snapshot();
        if snap.pi != config.pi {
            enactor.set_config(snap.pi)?;
        }
        config = snap;

        let telemetry = state.advance(&pending, &mut rng)?;
        pending.clear();
        let binding = monitor.observe(&telemetry)?;
        let observed = reliability_of(&binding, formula)?;
        samples.push((t, observed));

        let mut synthesize = t == 0;
        match enactor.enact(&strategy, observed, &knobs(&state))? {
            Enactment::Hold => {}
            Enactment::Adjust(cmds) => {
                adaptations += 1;
                for c in cmds {
                    pending.push(SetRate {
                        sensor: c.sensor.clone(),
                        rate: c.new_rate,
                    });
                    commands.push(CommandRecord {
                        tick: t,
                        sensor: c.sensor,
                        old_rate: c.old_rate,
                        new_rate: c.new_rate,
                        u: c.u,
                    });
                }
            }
            Enactment::Escalate { error } => {
                debug!("tick {t}: escalation with error {error}");
                escalations += 1;
                enactor.reset();
                synthesize = true;
            }
        }

        if synthesize {
            syntheses += 1;
            match search_for_strategy(&config.search, formula, &binding, goals.setpoint) {
                Ok(s) => debug!(
                    "tick {t}: strategy for {} from {:.4} (achieves {:.4}, {} steps)",
                    goals.property, s.initial_value, s.achieved, s.steps
                ),
                Err(e) => {
                    warn!("tick {t}: strategy synthesis failed: {e}");
                    synthesis_failures += 1;
                }
            }
        }
    }

    let series = ResponseSeries::new(samples, goals.setpoint, goals.stability_margin)?;
    let metrics = compute_metrics(&series)?;
    Ok(RunOutcome {
        series,
        metrics,
        commands,
        adaptations,
        escalations,
        syntheses,
        synthesis_failures,
        strategy,
        final_config: config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;
    use crate::sysmodel::DEFAULT_FORMULA;

    fn setup() -> (ScenarioConfig, ParametricFormula, Goals) {
        (
            ScenarioConfig::bsn_default(),
            parse_formula(DEFAULT_FORMULA).unwrap(),
            Goals::default(),
        )
    }

    fn cfg(kp: f64, ki: f64) -> LoopConfig {
        LoopConfig {
            pi: PIConfig { kp, ki, iw: 5 },
            search: SearchParams {
                gran: 0.5,
                offset: 0.5,
            },
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (sc, f, g) = setup();
        let a = run_closed_loop(&sc, &f, &g, cfg(100.0, 0.6), 11).unwrap();
        let b = run_closed_loop(&sc, &f, &g, cfg(100.0, 0.6), 11).unwrap();
        assert_eq!(a.series, b.series);
        assert_eq!(a.commands, b.commands);
        assert_eq!(a.series.samples().len(), sc.ticks as usize);
    }

    #[test]
    fn open_loop_never_moves_rates() {
        let (sc, f, g) = setup();
        let out = run_closed_loop(&sc, &f, &g, cfg(0.0, 0.0), 5).unwrap();
        assert!(out
            .commands
            .iter()
            .all(|c| c.new_rate == c.old_rate && c.u == 0.0));
        assert_eq!(out.syntheses, 1);
    }

    #[test]
    fn control_beats_open_loop() {
        let (sc, f, g) = setup();
        let open = run_closed_loop(&sc, &f, &g, cfg(0.0, 0.0), 5).unwrap();
        let closed = run_closed_loop(&sc, &f, &g, cfg(110.0, 0.6), 5).unwrap();
        let mean_abs_err = |o: &RunOutcome| {
            let s = o.series.samples();
            s.iter().map(|(_, v)| (v - 0.95).abs()).sum::<f64>() / s.len() as f64
        };
        assert!(mean_abs_err(&closed) < mean_abs_err(&open));
    }

    #[test]
    fn unbound_formula_variable_is_rejected() {
        let (sc, _, g) = setup();
        let f = parse_formula("rproc * heart").unwrap();
        assert!(matches!(
            run_closed_loop(&sc, &f, &g, cfg(1.0, 0.0), 1),
            Err(LoopError::Formula(FormulaError::UnboundVariable(v))) if v == "heart"
        ));
    }

    #[test]
    fn live_swap_takes_effect() {
        let (sc, f, g) = setup();
        let live = LiveConfig::new(cfg(0.0, 0.0));
        live.update(|c| c.pi.kp = 90.0);
        let out = run_closed_loop_live(&sc, &f, &g, &live, 2).unwrap();
        assert_eq!(out.final_config.pi.kp, 90.0);
        assert!(out.commands.iter().any(|c| c.u != 0.0));
    }

    #[test]
    fn pinned_knobs_escalate() {
        let (mut sc, f, mut g) = setup();
        // unreachable: even at minimum rates the hub cannot deliver
        sc.capacity = 1.0;
        g.setpoint = 0.99;
        let out = run_closed_loop(&sc, &f, &g, cfg(100.0, 1.0), 3).unwrap();
        assert!(out.escalations > 0);
        assert_eq!(out.syntheses, 1 + out.escalations);
    }
}
