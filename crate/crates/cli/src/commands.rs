use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use adaptctl_core::closedloop::{run_closed_loop, LoopConfig};
use adaptctl_core::enactor::PIConfig;
use adaptctl_core::formula::{parse_formula, ParametricFormula};
use adaptctl_core::goals::Goals;
use adaptctl_core::knowledge::{
    self, load_dataset, load_formula, load_goals, load_scenario, load_tuned, save_dataset,
    save_models, save_strategy, save_toml, save_tuned, sha256_file, ArtifactKind, KnowledgeRepo,
    TunedConfig,
};
use adaptctl_core::manager::SearchParams;
use adaptctl_core::metrics::{compute_metrics, ControlMetrics, ResponseSeries};
use adaptctl_core::nsga2::{EAConfig, ParetoFront};
use adaptctl_core::pipeline::{
    collect_enactor_data, collect_manager_data, gain_grid, random_subset, run_enactor_pipeline,
    run_manager_pipeline, search_grid, EnactorDatapoint, ManagerDatapoint,
};
use adaptctl_core::sysmodel::{ScenarioConfig, DEFAULT_FORMULA};
use adaptctl_core::FittedModel;
use serde::{Deserialize, Serialize};

use crate::error::{io, CliError};
use crate::{
    CollectEnactorArgs, CollectManagerArgs, ReportArgs, RunArgs, SystemArgs, TuneEnactorArgs,
    TuneManagerArgs,
};

pub const RESPONSE_FILE: &str = "response.csv";
pub const COMMANDS_FILE: &str = "commands.csv";
pub const STRATEGY_FILE: &str = "strategy.toml";
pub const REPORT_FILE: &str = "report.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub ticks: u64,
    pub response_csv: String,
    pub commands_csv: String,
    pub adaptations: usize,
    pub escalations: usize,
    pub syntheses: usize,
    pub synthesis_failures: usize,
    pub config: ReportConfig,
    pub metrics: ControlMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub kp: f64,
    pub ki: f64,
    pub iw: usize,
    pub gran: f64,
    pub offset: f64,
}

#[derive(Debug, Serialize)]
struct ScatterRow<'a> {
    file: &'a str,
    kp: f64,
    ki: f64,
    iw: usize,
    overshoot: f64,
    sse: Option<f64>,
    stable: bool,
    meets_threshold: bool,
}

fn repo() -> KnowledgeRepo {
    KnowledgeRepo::from_env_or(".")
}

fn load_system(
    repo: &KnowledgeRepo,
    a: &SystemArgs,
) -> Result<(ScenarioConfig, Goals, ParametricFormula), CliError> {
    let scenario = match &a.scenario {
        Some(p) => load_scenario(&repo.resolve(p))?,
        None => ScenarioConfig::bsn_default(),
    };
    let goals = load_goals_or_default(repo, a.goals.as_deref())?;
    let formula = match &a.formula {
        Some(p) => load_formula(&repo.resolve(p))?,
        None => parse_formula(DEFAULT_FORMULA).map_err(|e| CliError::Domain(e.to_string()))?,
    };
    Ok((scenario, goals, formula))
}

fn load_goals_or_default(repo: &KnowledgeRepo, path: Option<&Path>) -> Result<Goals, CliError> {
    Ok(match path {
        Some(p) => load_goals(&repo.resolve(p))?,
        None => Goals::default(),
    })
}

fn search_params(gran: f64, offset: f64) -> Result<SearchParams, CliError> {
    SearchParams::new(gran, offset).map_err(|e| CliError::Usage(e.to_string()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(io(path))
}

fn write_front(path: &Path, front: &ParetoFront) -> Result<(), CliError> {
    let f = fs::File::create(path).map_err(io(path))?;
    front
        .write_csv(f)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

fn describe(name: &str, m: &FittedModel) -> String {
    format!(
        "{name}: {} {:?} rmse {:.6e}",
        m.kind, m.coefficients, m.rmse
    )
}

pub fn run(a: RunArgs) -> Result<(), CliError> {
    let repo = repo();
    let (mut scenario, goals, formula) = load_system(&repo, &a.system)?;
    if let Some(t) = a.ticks {
        scenario.ticks = t;
    }
    let seed = a.system.seed.unwrap_or(scenario.seed);
    let tuned = a
        .tuned
        .as_ref()
        .map(|p| load_tuned(&repo.resolve(p)))
        .transpose()?;
    let pick = |flag: Option<f64>, from_tuned: Option<f64>, fallback: f64| {
        flag.or(from_tuned).unwrap_or(fallback)
    };
    let pi = PIConfig::new(
        pick(a.kp, tuned.as_ref().map(|t| t.kp), goals.kp.midpoint()),
        pick(a.ki, tuned.as_ref().map(|t| t.ki), goals.ki.midpoint()),
        a.iw.or(tuned.as_ref().map(|t| t.iw)).unwrap_or(goals.iw),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let search = search_params(
        pick(
            a.gran,
            tuned.as_ref().map(|t| t.gran),
            goals.gran.midpoint(),
        ),
        pick(
            a.offset,
            tuned.as_ref().map(|t| t.offset),
            goals.offset.midpoint(),
        ),
    )?;

    let out = run_closed_loop(&scenario, &formula, &goals, LoopConfig { pi, search }, seed)?;

    let dir = repo.resolve(&a.out);
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let response = dir.join(RESPONSE_FILE);
    let f = fs::File::create(&response).map_err(io(&response))?;
    out.series.write_csv(f)?;
    write_csv(&dir.join(COMMANDS_FILE), &out.commands)?;
    save_strategy(&dir.join(STRATEGY_FILE), &out.strategy)?;
    let report = RunReport {
        scenario: scenario.name.clone(),
        seed,
        ticks: scenario.ticks,
        response_csv: RESPONSE_FILE.into(),
        commands_csv: COMMANDS_FILE.into(),
        adaptations: out.adaptations,
        escalations: out.escalations,
        syntheses: out.syntheses,
        synthesis_failures: out.synthesis_failures,
        config: ReportConfig {
            kp: pi.kp,
            ki: pi.ki,
            iw: pi.iw,
            gran: search.gran,
            offset: search.offset,
        },
        metrics: out.metrics,
    };
    save_toml(&dir.join(REPORT_FILE), ArtifactKind::Report, &report)?;

    let m = &out.metrics;
    println!(
        "{} seed {seed}: kp={} ki={} iw={} stable={} overshoot={:.4} sse={} settling={} adaptations={} escalations={}",
        scenario.name,
        pi.kp,
        pi.ki,
        pi.iw,
        m.stable,
        m.overshoot,
        m.steady_state_error.map_or("-".into(), |s| format!("{s:.5}")),
        m.settling_time.map_or("-".into(), |s| s.to_string()),
        out.adaptations,
        out.escalations,
    );
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn collect_manager(a: CollectManagerArgs) -> Result<(), CliError> {
    let repo = repo();
    let (scenario, goals, formula) = load_system(&repo, &a.system)?;
    let grid = search_grid(&a.grid_gran, &a.grid_offset);
    if grid.is_empty() {
        return Err(CliError::Usage("the gran/offset grid is empty".into()));
    }
    let seed = a.system.seed.unwrap_or(scenario.seed);
    let rows = collect_manager_data(
        &scenario,
        &formula,
        &goals,
        &grid,
        a.repetitions,
        seed,
        !a.steps_only,
    )?;
    let out = repo.resolve(&a.out);
    save_dataset(&out, &rows)?;
    let failed = rows.iter().filter(|r| r.steps.is_none()).count();
    println!(
        "wrote {} rows ({failed} failed searches) to {}",
        rows.len(),
        out.display()
    );
    Ok(())
}

pub fn collect_enactor(a: CollectEnactorArgs) -> Result<(), CliError> {
    let repo = repo();
    let (scenario, goals, formula) = load_system(&repo, &a.system)?;
    let mut configs = gain_grid(&a.grid_kp, &a.grid_ki, a.iw.unwrap_or(goals.iw));
    if configs.is_empty() {
        return Err(CliError::Usage("the kp/ki grid is empty".into()));
    }
    if let Some(iw) = a.iw {
        if iw == 0 {
            return Err(CliError::Usage("iw must be at least 1".into()));
        }
    }
    let seed = a.system.seed.unwrap_or(scenario.seed);
    if let Some(k) = a.subset {
        configs = random_subset(&configs, k, seed);
    }
    let search = search_params(
        a.gran.unwrap_or(goals.gran.midpoint()),
        a.offset.unwrap_or(goals.offset.midpoint()),
    )?;
    let rows = collect_enactor_data(&scenario, &formula, &goals, &configs, search, seed)?;
    let out = repo.resolve(&a.out);
    save_dataset(&out, &rows)?;
    let stable = rows.iter().filter(|r| r.stable).count();
    println!(
        "wrote {} rows ({stable} stable) to {}",
        rows.len(),
        out.display()
    );
    Ok(())
}

fn base_tuned(path: &Path, goals: &Goals) -> Result<TunedConfig, CliError> {
    if path.exists() {
        return Ok(load_tuned(path)?);
    }
    let s = goals.default_search();
    Ok(TunedConfig {
        kp: goals.kp.midpoint(),
        ki: goals.ki.midpoint(),
        iw: goals.iw,
        gran: s.gran,
        offset: s.offset,
        provenance: Default::default(),
    })
}

pub fn tune_manager(a: TuneManagerArgs) -> Result<(), CliError> {
    let repo = repo();
    let c = &a.common;
    let goals = load_goals_or_default(&repo, c.goals.as_deref())?;
    let dataset = repo.resolve(&c.dataset);
    let rows: Vec<ManagerDatapoint> = load_dataset(&dataset)?;
    let tuning = run_manager_pipeline(&rows, &goals, a.target, &EAConfig::with_seed(c.seed))?;

    let out = repo.resolve(&c.out);
    let mut tuned = base_tuned(&out, &goals)?;
    tuned.gran = tuning.params.gran;
    tuned.offset = tuning.params.offset;
    tuned.provenance.seed = c.seed;
    tuned.provenance.manager_dataset_sha256 = Some(sha256_file(&dataset)?);

    if tuning.degenerate {
        eprintln!(
            "warning: {} is constant across the dataset; using the range midpoint",
            a.target.name()
        );
    }
    if let Some(model) = &tuning.model {
        println!("{}", describe(a.target.name(), model));
        let mut models = BTreeMap::new();
        models.insert(a.target.name().to_string(), model.clone());
        save_models(&sibling(&out, "manager_model.toml"), &models)?;
    }
    if let Some(front) = &tuning.front {
        println!("front size {}", front.members.len());
        write_front(&sibling(&out, "front_manager.csv"), front)?;
    }
    if let Some(p) = tuning.predicted {
        println!("predicted {}: {p} {}", a.target.name(), a.target.unit());
    }
    save_tuned(&out, &tuned)?;
    println!(
        "tuned gran={} offset={} -> {}",
        tuned.gran,
        tuned.offset,
        out.display()
    );
    Ok(())
}

pub fn tune_enactor(a: TuneEnactorArgs) -> Result<(), CliError> {
    let repo = repo();
    let c = &a.common;
    let goals = load_goals_or_default(&repo, c.goals.as_deref())?;
    let dataset = repo.resolve(&c.dataset);
    let rows: Vec<EnactorDatapoint> = load_dataset(&dataset)?;
    let tuning = run_enactor_pipeline(&rows, &goals, &EAConfig::with_seed(c.seed))?;

    let out = repo.resolve(&c.out);
    let mut tuned = base_tuned(&out, &goals)?;
    tuned.kp = tuning.pi.kp;
    tuned.ki = tuning.pi.ki;
    tuned.iw = tuning.pi.iw;
    tuned.provenance.seed = c.seed;
    tuned.provenance.enactor_dataset_sha256 = Some(sha256_file(&dataset)?);

    let m = &tuning.models;
    let mut models = BTreeMap::new();
    for (name, model) in [
        ("kp_sse", &m.kp_sse),
        ("kp_overshoot", &m.kp_overshoot),
        ("ki_sse", &m.ki_sse),
        ("ki_overshoot", &m.ki_overshoot),
    ] {
        println!("{}", describe(name, model));
        models.insert(name.to_string(), model.clone());
    }
    save_models(&sibling(&out, "enactor_models.toml"), &models)?;
    write_front(&sibling(&out, "front_kp.csv"), &tuning.kp_front)?;
    write_front(&sibling(&out, "front_ki.csv"), &tuning.ki_front)?;
    let [(kp_sse, kp_os), (ki_sse, ki_os)] = tuning.predicted();
    println!(
        "kp front size {}, knee kp={} (sse {kp_sse:.5}, overshoot {kp_os:.5})",
        tuning.kp_front.members.len(),
        tuning.pi.kp
    );
    println!(
        "ki front size {}, knee ki={} (sse {ki_sse:.5}, overshoot {ki_os:.5})",
        tuning.ki_front.members.len(),
        tuning.pi.ki
    );
    save_tuned(&out, &tuned)?;
    println!(
        "tuned kp={} ki={} iw={} -> {}",
        tuned.kp,
        tuned.ki,
        tuned.iw,
        out.display()
    );
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    if a.responses.is_empty() {
        return Err(CliError::Usage(
            "report needs at least one response file".into(),
        ));
    }
    let repo = repo();
    let goals = load_goals_or_default(&repo, a.goals.as_deref())?;
    let mut rows = Vec::with_capacity(a.responses.len());
    let mut names = Vec::with_capacity(a.responses.len());
    for p in &a.responses {
        let path = repo.resolve(p);
        let f = fs::File::open(&path).map_err(io(&path))?;
        let series = ResponseSeries::read_csv(f, goals.setpoint, goals.stability_margin)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let metrics = compute_metrics(&series)?;
        let run: RunReport =
            knowledge::load_toml(&sibling(&path, REPORT_FILE), ArtifactKind::Report)?;
        rows.push(EnactorDatapoint {
            kp: run.config.kp,
            ki: run.config.ki,
            iw: run.config.iw,
            stable: metrics.stable,
            overshoot: metrics.overshoot,
            sse: metrics.steady_state_error,
            settling_time: metrics.settling_time,
        });
        names.push(p.display().to_string());
    }

    let out = repo.resolve(&a.out);
    save_dataset(&out, &rows)?;
    let scatter: Vec<ScatterRow> = rows
        .iter()
        .zip(&names)
        .map(|(r, n)| ScatterRow {
            file: n,
            kp: r.kp,
            ki: r.ki,
            iw: r.iw,
            overshoot: r.overshoot,
            sse: r.sse,
            stable: r.stable,
            meets_threshold: r.stable
                && r.overshoot <= a.threshold
                && r.sse.is_some_and(|s| s <= a.threshold),
        })
        .collect();
    write_csv(&repo.resolve(&a.scatter), &scatter)?;

    for s in &scatter {
        println!(
            "{}: kp={} ki={} stable={} overshoot={:.4} sse={}{}",
            s.file,
            s.kp,
            s.ki,
            s.stable,
            s.overshoot,
            s.sse.map_or("-".into(), |v| format!("{v:.5}")),
            if s.meets_threshold { " *" } else { "" }
        );
    }
    let meeting = scatter.iter().filter(|s| s.meets_threshold).count();
    println!(
        "{meeting} of {} configurations within overshoot and SSE <= {}",
        scatter.len(),
        a.threshold
    );
    Ok(())
}
