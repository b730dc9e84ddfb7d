//! Control-theoretic self-adaptation for a simulated body sensor network.
//!
//! A manager searches a parametric reliability formula for a strategy, a PI
//! enactor drives sensor sampling rates toward the goal, and offline
//! pipelines tune both from collected data with curve fitting and NSGA-II.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod closedloop;
pub mod curvefit;
pub mod enactor;
pub mod formula;
pub mod goals;
pub mod knowledge;
pub mod manager;
pub mod metrics;
pub mod nsga2;
pub mod pipeline;
pub mod sysmodel;

pub use closedloop::{
    run_closed_loop, run_closed_loop_live, CommandRecord, LiveConfig, LoopConfig, LoopError,
    RunOutcome,
};
pub use curvefit::{fit, fit_best, FitError, FittedModel, ModelKind, Sample};
pub use enactor::{
    Action, Enactment, Enactor, EnactorError, PIConfig, PIState, RateCommand, Strategy,
};
pub use formula::{
    evaluate, list_variables, parse_formula, Binding, FormulaError, ParametricFormula,
};
pub use goals::{Goals, GoalsError, Range};
pub use knowledge::{KnowledgeError, KnowledgeRepo, Provenance, TunedConfig};
pub use manager::{
    search_for_strategy, select_strategy, timed_search, SearchError, SearchParams, Synthesis,
};
pub use metrics::{compute_metrics, ControlMetrics, MetricsError, ResponseSeries};
pub use nsga2::{optimize, EAConfig, FnProblem, Individual, OptimizeError, ParetoFront, Problem};
pub use pipeline::{
    apply_configuration, collect_enactor_data, collect_manager_data, run_enactor_pipeline,
    run_manager_pipeline, ConfigUpdate, EnactorDatapoint, GridSpec, ManagerDatapoint,
    ManagerTarget, PipelineError,
};
pub use sysmodel::{
    global_reliability, inject_disturbance, step, ScenarioConfig, SimError, SystemState, Telemetry,
};
