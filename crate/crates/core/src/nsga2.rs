//! NSGA-II: elitist non-dominated sorting GA with crowding distance,
//! simulated binary crossover and polynomial mutation. All objectives are
//! minimized; the search box is enforced by clamping.

use std::cmp::Ordering;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizeError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("evaluation failed at {genes:?}: {message}")]
    Evaluation { genes: Vec<f64>, message: String },
}

pub trait Problem {
    fn bounds(&self) -> &[(f64, f64)];
    fn num_objectives(&self) -> usize;
    fn evaluate(&self, genes: &[f64]) -> Result<Vec<f64>, String>;

    fn dimension(&self) -> usize {
        self.bounds().len()
    }
}

/// A [`Problem`] backed by a closure.
pub struct FnProblem<F> {
    bounds: Vec<(f64, f64)>,
    objectives: usize,
    f: F,
}

impl<F> FnProblem<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, String>,
{
    pub fn new(bounds: Vec<(f64, f64)>, objectives: usize, f: F) -> Self {
        Self {
            bounds,
            objectives,
            f,
        }
    }
}

impl<F> Problem for FnProblem<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, String>,
{
    fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn num_objectives(&self) -> usize {
        self.objectives
    }

    fn evaluate(&self, genes: &[f64]) -> Result<Vec<f64>, String> {
        (self.f)(genes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genes: Vec<f64>,
    pub objectives: Vec<f64>,
    /// Front index, starting at 1.
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    fn new(genes: Vec<f64>, objectives: Vec<f64>) -> Self {
        Self {
            genes,
            objectives,
            rank: 0,
            crowding: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EAConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_probability: f64,
    /// Per-gene mutation probability; `None` means `1 / dimension`.
    pub mutation_probability: Option<f64>,
    pub sbx_eta: f64,
    pub mutation_eta: f64,
    pub seed: u64,
}

impl Default for EAConfig {
    fn default() -> Self {
        Self {
            population_size: 100,
            generations: 100,
            crossover_probability: 0.9,
            mutation_probability: None,
            sbx_eta: 20.0,
            mutation_eta: 20.0,
            seed: 0,
        }
    }
}

impl EAConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        if self.population_size < 4 || self.population_size % 2 != 0 {
            return Err(OptimizeError::InvalidConfig(format!(
                "population size must be even and at least 4, got {}",
                self.population_size
            )));
        }
        let probs = [
            self.crossover_probability,
            self.mutation_probability.unwrap_or(0.0),
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(OptimizeError::InvalidConfig(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        if !(self.sbx_eta >= 0.0) || !(self.mutation_eta >= 0.0) {
            return Err(OptimizeError::InvalidConfig(
                "distribution indices must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Objective evaluations performed by [`optimize`].
    pub fn evaluations(&self) -> usize {
        self.population_size * (self.generations + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFront {
    pub members: Vec<Individual>,
    pub evaluations: usize,
}

impl ParetoFront {
    /// CSV with header `gene_1..gene_d,obj_1..obj_m,rank,crowding`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let (d, m) = self
            .members
            .first()
            .map(|i| (i.genes.len(), i.objectives.len()))
            .unwrap_or((0, 0));
        let mut header: Vec<String> = (1..=d).map(|i| format!("gene_{i}")).collect();
        header.extend((1..=m).map(|i| format!("obj_{i}")));
        header.push("rank".into());
        header.push("crowding".into());
        out.write_record(&header)?;
        for ind in &self.members {
            let mut row: Vec<String> = ind.genes.iter().map(f64::to_string).collect();
            row.extend(ind.objectives.iter().map(f64::to_string));
            row.push(ind.rank.to_string());
            row.push(ind.crowding.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `a` dominates `b`: no worse everywhere, strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Partitions indices of `objectives` into fronts; indices within a front ascend.
pub fn fast_nondominated_sort(objectives: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = objectives.len();
    let mut dominated_by_me: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for p in 0..n {
        for q in p + 1..n {
            if dominates(&objectives[p], &objectives[q]) {
                dominated_by_me[p].push(q);
                domination_count[q] += 1;
            } else if dominates(&objectives[q], &objectives[p]) {
                dominated_by_me[q].push(p);
                domination_count[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by_me[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of one front.
pub fn crowding_distance(front: &[Vec<f64>]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let m = front[0].len();
    let mut dist = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..m {
        order.sort_by(|&a, &b| front[a][k].total_cmp(&front[b][k]).then(a.cmp(&b)));
        let lo = front[order[0]][k];
        let hi = front[order[n - 1]][k];
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        for w in 1..n - 1 {
            let i = order[w];
            if dist[i].is_finite() {
                dist[i] += (front[order[w + 1]][k] - front[order[w - 1]][k]) / span;
            }
        }
    }
    dist
}

/// Sets `rank` and `crowding` on every individual; returns the fronts.
pub fn rank_population(population: &mut [Individual]) -> Vec<Vec<usize>> {
    let objs: Vec<Vec<f64>> = population.iter().map(|i| i.objectives.clone()).collect();
    let fronts = fast_nondominated_sort(&objs);
    for (r, front) in fronts.iter().enumerate() {
        let fo: Vec<Vec<f64>> = front.iter().map(|&i| objs[i].clone()).collect();
        for (&i, d) in front.iter().zip(crowding_distance(&fo)) {
            population[i].rank = r + 1;
            population[i].crowding = d;
        }
    }
    fronts
}

/// Single-spread SBX: both children share one spread factor per gene, so
/// their mean equals the parents' mean before clamping.
pub fn sbx_crossover<R: Rng>(
    a: &[f64],
    b: &[f64],
    bounds: &[(f64, f64)],
    config: &EAConfig,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = a.to_vec();
    let mut c2 = b.to_vec();
    if rng.gen::<f64>() >= config.crossover_probability {
        return (c1, c2);
    }
    let expo = 1.0 / (config.sbx_eta + 1.0);
    for i in 0..a.len() {
        if rng.gen::<f64>() > 0.5 || (a[i] - b[i]).abs() <= 1e-14 {
            continue;
        }
        let u: f64 = rng.gen();
        let beta = if u <= 0.5 {
            (2.0 * u).powf(expo)
        } else {
            (1.0 / (2.0 * (1.0 - u))).powf(expo)
        };
        let mid = 0.5 * (a[i] + b[i]);
        let half = 0.5 * beta * (b[i] - a[i]);
        let (lo, hi) = bounds[i];
        c1[i] = (mid - half).clamp(lo, hi);
        c2[i] = (mid + half).clamp(lo, hi);
    }
    (c1, c2)
}

/// Bounded polynomial mutation; perturbation shrinks near the box edges.
pub fn polynomial_mutation<R: Rng>(
    genes: &mut [f64],
    bounds: &[(f64, f64)],
    config: &EAConfig,
    rng: &mut R,
) {
    let pm = config
        .mutation_probability
        .unwrap_or(1.0 / genes.len().max(1) as f64);
    let expo = 1.0 / (config.mutation_eta + 1.0);
    for (x, &(lo, hi)) in genes.iter_mut().zip(bounds) {
        if rng.gen::<f64>() >= pm {
            continue;
        }
        let span = hi - lo;
        let d1 = (*x - lo) / span;
        let d2 = (hi - *x) / span;
        let u: f64 = rng.gen();
        let dq = if u < 0.5 {
            let v = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1).powf(config.mutation_eta + 1.0);
            v.powf(expo) - 1.0
        } else {
            let v = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2).powf(config.mutation_eta + 1.0);
            1.0 - v.powf(expo)
        };
        *x = (*x + dq * span).clamp(lo, hi);
    }
}

/// Binary tournament on (rank, crowding); returns the winner's index.
pub fn tournament_select<R: Rng>(population: &[Individual], rng: &mut R) -> usize {
    let a = rng.gen_range(0..population.len());
    let b = rng.gen_range(0..population.len());
    let (x, y) = (&population[a], &population[b]);
    if y.rank < x.rank || (y.rank == x.rank && y.crowding > x.crowding) {
        b
    } else {
        a
    }
}

fn evaluate<P: Problem + ?Sized>(
    problem: &P,
    genes: Vec<f64>,
) -> Result<Individual, OptimizeError> {
    let objs = problem
        .evaluate(&genes)
        .map_err(|message| OptimizeError::Evaluation {
            genes: genes.clone(),
            message,
        })?;
    if objs.len() != problem.num_objectives() || objs.iter().any(|v| v.is_nan()) {
        return Err(OptimizeError::Evaluation {
            genes,
            message: format!("bad objective vector {objs:?}"),
        });
    }
    Ok(Individual::new(genes, objs))
}

fn validate_problem<P: Problem + ?Sized>(problem: &P) -> Result<(), OptimizeError> {
    if problem.dimension() == 0 {
        return Err(OptimizeError::InvalidProblem(
            "no decision variables".into(),
        ));
    }
    if problem.num_objectives() == 0 {
        return Err(OptimizeError::InvalidProblem("no objectives".into()));
    }
    for (i, (lo, hi)) in problem.bounds().iter().enumerate() {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(OptimizeError::InvalidProblem(format!(
                "bounds of variable {i} are degenerate: [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

pub fn optimize<P: Problem + ?Sized>(
    problem: &P,
    config: &EAConfig,
) -> Result<ParetoFront, OptimizeError> {
    optimize_observed(problem, config, |_, _| {})
}

/// Like [`optimize`], calling `observe(generation, population)` after the
/// initial population (generation 0) and after every survivor selection.
pub fn optimize_observed<P, F>(
    problem: &P,
    config: &EAConfig,
    mut observe: F,
) -> Result<ParetoFront, OptimizeError>
where
    P: Problem + ?Sized,
    F: FnMut(usize, &[Individual]),
{
    validate_problem(problem)?;
    config.validate()?;
    let bounds = problem.bounds().to_vec();
    let n = config.population_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut evaluations = 0;

    let mut population = Vec::with_capacity(n);
    for _ in 0..n {
        let genes: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| rng.gen_range(lo..=hi))
            .collect();
        population.push(evaluate(problem, genes)?);
        evaluations += 1;
    }
    rank_population(&mut population);
    observe(0, &population);

    for gen in 1..=config.generations {
        let mut offspring_genes = Vec::with_capacity(n);
        while offspring_genes.len() < n {
            let pa = tournament_select(&population, &mut rng);
            let pb = tournament_select(&population, &mut rng);
            let (mut c1, mut c2) = sbx_crossover(
                &population[pa].genes,
                &population[pb].genes,
                &bounds,
                config,
                &mut rng,
            );
            polynomial_mutation(&mut c1, &bounds, config, &mut rng);
            polynomial_mutation(&mut c2, &bounds, config, &mut rng);
            offspring_genes.push(c1);
            offspring_genes.push(c2);
        }
        let mut merged = population;
        for genes in offspring_genes {
            merged.push(evaluate(problem, genes)?);
            evaluations += 1;
        }
        let fronts = rank_population(&mut merged);
        let mut keep = Vec::with_capacity(n);
        for front in fronts {
            if keep.len() + front.len() <= n {
                keep.extend(front);
            } else {
                let mut last = front;
                last.sort_by(|&a, &b| {
                    merged[b]
                        .crowding
                        .partial_cmp(&merged[a].crowding)
                        .unwrap_or(Ordering::Equal)
                        .then(a.cmp(&b))
                });
                keep.extend(last.into_iter().take(n - keep.len()));
            }
            if keep.len() == n {
                break;
            }
        }
        let mut slots: Vec<Option<Individual>> = merged.into_iter().map(Some).collect();
        population = keep.into_iter().map(|i| slots[i].take().unwrap()).collect();
        rank_population(&mut population);
        observe(gen, &population);
    }

    let members = population.into_iter().filter(|i| i.rank == 1).collect();
    Ok(ParetoFront {
        members,
        evaluations,
    })
}

/// Area dominated by a two-objective point set, bounded by `reference`.
pub fn hypervolume_2d(points: &[Vec<f64>], reference: (f64, f64)) -> f64 {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p[0], p[1]))
        .filter(|&(a, b)| a < reference.0 && b < reference.1)
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut area = 0.0;
    let mut best_f2 = reference.1;
    for (i, &(f1, f2)) in pts.iter().enumerate() {
        if f2 < best_f2 {
            best_f2 = f2;
        }
        let next_f1 = pts.get(i + 1).map_or(reference.0, |p| p.0);
        area += (next_f1 - f1) * (reference.1 - best_f2);
    }
    area
}
