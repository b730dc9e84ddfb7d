//! Offline tuning: collect data, fit models, optimize them, apply the result.

use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closedloop::{initial_binding, run_closed_loop, LiveConfig, LoopConfig, LoopError};
use crate::curvefit::{fit, fit_best, FitError, FittedModel, ModelKind, Sample};
use crate::enactor::PIConfig;
use crate::formula::ParametricFormula;
use crate::goals::{Goals, GoalsError};
use crate::manager::{timed_search, SearchParams};
use crate::nsga2::{optimize, EAConfig, FnProblem, OptimizeError, ParetoFront};
use crate::sysmodel::ScenarioConfig;

/// Relative spread below which a target column counts as constant.
const FLAT_TOLERANCE: f64 = 1e-12;
const KNEE_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Goals(#[from] GoalsError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Loop(#[from] LoopError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManagerDatapoint {
    pub gran: f64,
    pub offset: f64,
    /// Mean wall time per search; empty when the search failed or timing was off.
    pub time_to_solution_s: Option<f64>,
    /// Empty when the search failed.
    pub steps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnactorDatapoint {
    pub kp: f64,
    pub ki: f64,
    pub iw: usize,
    pub stable: bool,
    pub overshoot: f64,
    pub sse: Option<f64>,
    pub settling_time: Option<u64>,
}

/// Inclusive arithmetic grid written `lo:hi:step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self, PipelineError> {
        if !(step > 0.0) || !lo.is_finite() || !hi.is_finite() || !step.is_finite() {
            return Err(PipelineError::InvalidGrid(format!("{lo}:{hi}:{step}")));
        }
        Ok(Self { lo, hi, step })
    }

    /// Empty when `lo > hi`. Values are rounded to 12 decimals so that
    /// `0.2 + 2 * 0.2` prints as `0.6`.
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut i = 0u64;
        loop {
            let v = self.lo + i as f64 * self.step;
            if v > self.hi + 1e-9 * self.step {
                break;
            }
            out.push((v * 1e12).round() / 1e12);
            i += 1;
        }
        out
    }
}

impl FromStr for GridSpec {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || PipelineError::InvalidGrid(format!("`{s}` is not lo:hi:step"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|_| bad());
        Self::new(num(parts[0])?, num(parts[1])?, num(parts[2])?)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.step)
    }
}

/// Every (kp, ki) pair, kp outermost.
pub fn gain_grid(kp: &GridSpec, ki: &GridSpec, iw: usize) -> Vec<PIConfig> {
    let kis = ki.values();
    kp.values()
        .into_iter()
        .flat_map(|p| kis.iter().map(move |&i| PIConfig { kp: p, ki: i, iw }))
        .collect()
}

/// Every (gran, offset) pair, gran outermost.
pub fn search_grid(gran: &GridSpec, offset: &GridSpec) -> Vec<SearchParams> {
    let offs = offset.values();
    gran.values()
        .into_iter()
        .flat_map(|g| {
            offs.iter()
                .map(move |&o| SearchParams { gran: g, offset: o })
        })
        .collect()
}

/// `k` items drawn without replacement, kept in their original order.
pub fn random_subset<T: Clone>(items: &[T], k: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, items.len(), k.min(items.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

/// Times the manager's search on the binding seen after the first tick of
/// the seeded scenario. Every repetition searches the same instance.
pub fn collect_manager_data(
    scenario: &ScenarioConfig,
    formula: &ParametricFormula,
    goals: &Goals,
    grid: &[SearchParams],
    repetitions: usize,
    seed: u64,
    record_time: bool,
) -> Result<Vec<ManagerDatapoint>, PipelineError> {
    goals.validate()?;
    if grid.is_empty() {
        return Err(PipelineError::InvalidGrid("empty grid".into()));
    }
    for p in grid {
        goals.check_search(p)?;
    }
    let reps = repetitions.max(1);
    let current = initial_binding(scenario, seed)?;
    let mut rows = Vec::with_capacity(grid.len());
    for p in grid {
        let mut total = 0.0;
        let mut steps = None;
        for _ in 0..reps {
            match timed_search(p, formula, &current, goals.setpoint) {
                Ok(t) => {
                    total += t.elapsed_s;
                    steps = Some(t.steps);
                }
                Err(e) => {
                    warn!("search failed at gran={} offset={}: {e}", p.gran, p.offset);
                    steps = None;
                    break;
                }
            }
        }
        rows.push(ManagerDatapoint {
            gran: p.gran,
            offset: p.offset,
            time_to_solution_s: steps.filter(|_| record_time).map(|_| total / reps as f64),
            steps,
        });
    }
    Ok(rows)
}

/// One closed-loop run per gain setting, all on the same seed so that every
/// configuration faces the same failures.
pub fn collect_enactor_data(
    scenario: &ScenarioConfig,
    formula: &ParametricFormula,
    goals: &Goals,
    configs: &[PIConfig],
    search: SearchParams,
    seed: u64,
) -> Result<Vec<EnactorDatapoint>, PipelineError> {
    if configs.is_empty() {
        return Err(PipelineError::InvalidGrid("no configurations".into()));
    }
    let run = |pi: &PIConfig| -> Result<EnactorDatapoint, PipelineError> {
        let out = run_closed_loop(
            scenario,
            formula,
            goals,
            LoopConfig { pi: *pi, search },
            seed,
        )?;
        Ok(EnactorDatapoint {
            kp: pi.kp,
            ki: pi.ki,
            iw: pi.iw,
            stable: out.metrics.stable,
            overshoot: out.metrics.overshoot,
            sse: out.metrics.steady_state_error,
            settling_time: out.metrics.settling_time,
        })
    };
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(configs.len());
    let chunk = configs.len().div_ceil(workers);
    let results: Vec<Result<EnactorDatapoint, PipelineError>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(run).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("collection worker panicked"))
            .collect()
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManagerTarget {
    Steps,
    Time,
}

impl ManagerTarget {
    pub fn name(self) -> &'static str {
        match self {
            ManagerTarget::Steps => "steps",
            ManagerTarget::Time => "time",
        }
    }

    /// Unit the model is fitted in. The second exponential term has unit
    /// amplitude, so wall time is scaled to microseconds to keep outputs above 1.
    pub fn unit(self) -> &'static str {
        match self {
            ManagerTarget::Steps => "steps",
            ManagerTarget::Time => "us",
        }
    }

    fn value(self, row: &ManagerDatapoint) -> Option<f64> {
        match self {
            ManagerTarget::Steps => row.steps.map(|s| s as f64),
            ManagerTarget::Time => row.time_to_solution_s.map(|t| t * 1e6),
        }
    }
}

impl FromStr for ManagerTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "steps" => Ok(Self::Steps),
            "time" => Ok(Self::Time),
            _ => Err(format!("unknown target `{s}` (expected steps or time)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManagerTuning {
    pub params: SearchParams,
    /// Absent when the data was constant.
    pub model: Option<FittedModel>,
    pub predicted: Option<f64>,
    pub front: Option<ParetoFront>,
    /// Constant data: `params` is the range midpoint.
    pub degenerate: bool,
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn is_flat(ys: &[f64]) -> bool {
    let (lo, hi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &y| {
            (l.min(y), h.max(y))
        });
    let scale = ys.iter().map(|y| y.abs()).fold(1.0, f64::max);
    hi - lo <= FLAT_TOLERANCE * scale
}

/// Index of the member minimizing the predicted value, ties to smaller genes.
fn best_single(front: &ParetoFront) -> usize {
    let mut best = 0;
    for (i, m) in front.members.iter().enumerate().skip(1) {
        let b = &front.members[best];
        let ord = m.objectives[0]
            .total_cmp(&b.objectives[0])
            .then_with(|| cmp_genes(&m.genes, &b.genes));
        if ord.is_lt() {
            best = i;
        }
    }
    best
}

fn cmp_genes(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

pub fn run_manager_pipeline(
    data: &[ManagerDatapoint],
    goals: &Goals,
    target: ManagerTarget,
    ea: &EAConfig,
) -> Result<ManagerTuning, PipelineError> {
    goals.validate()?;
    let points: Vec<Sample> = data
        .iter()
        .filter_map(|r| {
            target
                .value(r)
                .map(|y| Sample::new(vec![r.gran, r.offset], y))
        })
        .collect();
    if points.len() < 4 {
        return Err(PipelineError::InsufficientData(format!(
            "{} usable rows for target {}, need 4",
            points.len(),
            target.name()
        )));
    }
    if distinct(points.iter().map(|p| p.inputs[0])) < 2
        || distinct(points.iter().map(|p| p.inputs[1])) < 2
    {
        return Err(PipelineError::InsufficientData(
            "rows must vary in both gran and offset".into(),
        ));
    }
    let ys: Vec<f64> = points.iter().map(|p| p.output).collect();
    if is_flat(&ys) {
        warn!(
            "{} is constant over the dataset; using the range midpoint",
            target.name()
        );
        return Ok(ManagerTuning {
            params: goals.default_search(),
            model: None,
            predicted: None,
            front: None,
            degenerate: true,
        });
    }

    let model = fit(&points, ModelKind::SumExp2d)?.with_input_names(&["gran", "offset"]);
    info!("manager model {:?} rmse {}", model.coefficients, model.rmse);
    let problem = FnProblem::new(
        vec![goals.gran.bounds(), goals.offset.bounds()],
        1,
        |g: &[f64]| model.predict(g).map(|y| vec![y]).map_err(|e| e.to_string()),
    );
    let front = optimize(&problem, ea)?;
    let best = &front.members[best_single(&front)];
    let params = SearchParams {
        gran: best.genes[0],
        offset: best.genes[1],
    };
    let predicted = Some(best.objectives[0]);
    Ok(ManagerTuning {
        params,
        predicted,
        model: Some(model),
        front: Some(front),
        degenerate: false,
    })
}

/// Front member nearest the ideal point after min-max normalizing each
/// objective; a flat objective normalizes to 0. Ties go to the smaller genes.
pub fn knee_point(front: &ParetoFront) -> usize {
    let m = front.members.first().map_or(0, |i| i.objectives.len());
    let span: Vec<(f64, f64)> = (0..m)
        .map(|j| {
            front
                .members
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), i| {
                    (l.min(i.objectives[j]), h.max(i.objectives[j]))
                })
        })
        .collect();
    let dist = |objs: &[f64]| -> f64 {
        objs.iter()
            .zip(&span)
            .map(|(v, (lo, hi))| {
                if hi > lo {
                    ((v - lo) / (hi - lo)).powi(2)
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, ind) in front.members.iter().enumerate() {
        let d = dist(&ind.objectives);
        let closer = d < best_d - KNEE_TIE_EPS;
        let tie = (d - best_d).abs() <= KNEE_TIE_EPS
            && cmp_genes(&ind.genes, &front.members[best].genes).is_lt();
        if closer || tie {
            best = i;
            best_d = best_d.min(d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnactorModels {
    pub kp_sse: FittedModel,
    pub kp_overshoot: FittedModel,
    pub ki_sse: FittedModel,
    pub ki_overshoot: FittedModel,
}

#[derive(Debug, Clone)]
pub struct EnactorTuning {
    pub pi: PIConfig,
    pub models: EnactorModels,
    pub kp_front: ParetoFront,
    pub ki_front: ParetoFront,
    pub kp_knee: usize,
    pub ki_knee: usize,
}

impl EnactorTuning {
    /// (SSE, overshoot) the models predict for the tuned gains, kp side then ki side.
    pub fn predicted(&self) -> [(f64, f64); 2] {
        let k = &self.kp_front.members[self.kp_knee].objectives;
        let i = &self.ki_front.members[self.ki_knee].objectives;
        [(k[0], k[1]), (i[0], i[1])]
    }
}

fn gain_front(
    sse: &FittedModel,
    overshoot: &FittedModel,
    range: (f64, f64),
    ea: &EAConfig,
) -> Result<(ParetoFront, usize), PipelineError> {
    let problem = FnProblem::new(vec![range], 2, |g: &[f64]| {
        let s = sse.predict(g).map_err(|e| e.to_string())?;
        let o = overshoot.predict(g).map_err(|e| e.to_string())?;
        Ok(vec![s.max(0.0), o.max(0.0)])
    });
    let front = optimize(&problem, ea)?;
    let knee = knee_point(&front);
    Ok((front, knee))
}

/// Fits SSE and overshoot against kp and against ki separately, then picks
/// each gain from the knee of its own two-objective front, kp first.
pub fn run_enactor_pipeline(
    data: &[EnactorDatapoint],
    goals: &Goals,
    ea: &EAConfig,
) -> Result<EnactorTuning, PipelineError> {
    goals.validate()?;
    let n_kp = distinct(data.iter().map(|r| r.kp));
    let n_ki = distinct(data.iter().map(|r| r.ki));
    if n_kp < 4 || n_ki < 3 {
        return Err(PipelineError::InsufficientData(format!(
            "need at least 4 distinct kp and 3 distinct ki values, got {n_kp} and {n_ki}"
        )));
    }
    let settled: Vec<&EnactorDatapoint> = data.iter().filter(|r| r.sse.is_some()).collect();
    let pts = |rows: &[&EnactorDatapoint],
               x: fn(&EnactorDatapoint) -> f64,
               y: fn(&EnactorDatapoint) -> f64| {
        rows.iter()
            .map(|r| Sample::one(x(r), y(r)))
            .collect::<Vec<_>>()
    };
    let all: Vec<&EnactorDatapoint> = data.iter().collect();
    let sse_of = |r: &EnactorDatapoint| r.sse.unwrap_or_default();
    let os_of = |r: &EnactorDatapoint| r.overshoot;

    let kp_sse =
        fit_best(&pts(&settled, |r| r.kp, sse_of), &ModelKind::ONE_D)?.with_input_names(&["kp"]);
    let kp_overshoot =
        fit_best(&pts(&all, |r| r.kp, os_of), &ModelKind::ONE_D)?.with_input_names(&["kp"]);
    let ki_sse =
        fit_best(&pts(&settled, |r| r.ki, sse_of), &ModelKind::ONE_D)?.with_input_names(&["ki"]);
    let ki_overshoot =
        fit_best(&pts(&all, |r| r.ki, os_of), &ModelKind::ONE_D)?.with_input_names(&["ki"]);

    let (kp_front, kp_knee) = gain_front(&kp_sse, &kp_overshoot, goals.kp.bounds(), ea)?;
    let (ki_front, ki_knee) = gain_front(&ki_sse, &ki_overshoot, goals.ki.bounds(), ea)?;
    let pi = PIConfig {
        kp: kp_front.members[kp_knee].genes[0],
        ki: ki_front.members[ki_knee].genes[0],
        iw: goals.iw,
    };
    info!("tuned kp={} ki={} iw={}", pi.kp, pi.ki, pi.iw);
    Ok(EnactorTuning {
        pi,
        models: EnactorModels {
            kp_sse,
            kp_overshoot,
            ki_sse,
            ki_overshoot,
        },
        kp_front,
        ki_front,
        kp_knee,
        ki_knee,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfigUpdate {
    Manager(SearchParams),
    Enactor(PIConfig),
    Both(SearchParams, PIConfig),
}

/// Range-checks the update, then swaps it into the live configuration.
/// Nothing is applied if any value is out of range.
pub fn apply_configuration(
    live: &LiveConfig,
    goals: &Goals,
    update: ConfigUpdate,
) -> Result<LoopConfig, PipelineError> {
    let (search, pi) = match update {
        ConfigUpdate::Manager(s) => (Some(s), None),
        ConfigUpdate::Enactor(p) => (None, Some(p)),
        ConfigUpdate::Both(s, p) => (Some(s), Some(p)),
    };
    if let Some(s) = &search {
        goals.check_search(s)?;
    }
    if let Some(p) = &pi {
        goals.check_pi(p)?;
    }
    live.update(|c| {
        if let Some(s) = search {
            c.search = s;
        }
        if let Some(p) = pi {
            c.pi = p;
        }
    });
    Ok(live.snapshot())
}
