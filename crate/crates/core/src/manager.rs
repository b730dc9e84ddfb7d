//! Strategy synthesis: search the formula's variables for an assignment that
//! pushes the global property past the setpoint.
//!
//! For each pivot variable every variable is reset to `offset`, the pivot is
//! stepped by `gran * |error|` until the comparison holds or it clamps at the
//! edge of [0, 1], then each remaining variable is stepped the same way. Each
//! step loop runs at least once.

use std::time::Instant;

use thiserror::Error;

use crate::enactor::{Action, Strategy};
use crate::formula::{Binding, FormulaError, ParametricFormula};

/// Errors at or below this count as "already at the setpoint".
pub const GOAL_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: u64 = 1_000_000;
/// Slack on the strict comparison so values landing on `p_ref` up to
/// rounding do not count as passing it.
pub const COMPARE_EPS: f64 = 1e-9;
const CLAMP_EPS: f64 = 1e-12;
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
    #[error("setpoint {0} outside (0, 1]")]
    InvalidSetpoint(f64),
    #[error("no pivot produced an assignment reaching the setpoint")]
    SolutionNotFound,
    #[error("search exceeded {0} steps")]
    NonConvergence(u64),
    #[error("no candidates to select from")]
    NoCandidates,
    #[error(transparent)]
    Formula(#[from] FormulaError),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SearchParams {
    pub gran: f64,
    pub offset: f64,
}

impl SearchParams {
    pub fn new(gran: f64, offset: f64) -> Result<Self, SearchError> {
        let p = Self { gran, offset };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if !(self.gran > 0.0) || !self.gran.is_finite() {
            return Err(SearchError::InvalidParams(format!(
                "gran must be positive, got {}",
                self.gran
            )));
        }
        if !(0.0..=1.0).contains(&self.offset) {
            return Err(SearchError::InvalidParams(format!(
                "offset must lie in [0, 1], got {}",
                self.offset
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateStrategy {
    /// Index of the pivot variable in formula order.
    pub pivot: usize,
    pub assignments: Binding,
    pub achieved: f64,
    pub deviation: f64,
}

/// Result of one search: the selected assignment plus everything considered.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub goal: f64,
    pub initial_value: f64,
    pub assignments: Binding,
    pub achieved: f64,
    pub candidates: Vec<CandidateStrategy>,
    pub steps: u64,
    /// The current configuration already met the goal; nothing was searched.
    pub noop: bool,
}

impl Synthesis {
    pub fn to_strategy(&self, property: &str, condition: f64, actions: Vec<Action>) -> Strategy {
        Strategy {
            property: property.to_string(),
            goal: self.goal,
            condition,
            actions,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedSearch {
    pub synthesis: Synthesis,
    pub elapsed_s: f64,
    pub steps: u64,
}

pub fn search_for_strategy(
    params: &SearchParams,
    formula: &ParametricFormula,
    current: &Binding,
    p_ref: f64,
) -> Result<Synthesis, SearchError> {
    params.validate()?;
    if !(p_ref > 0.0 && p_ref <= 1.0) {
        return Err(SearchError::InvalidSetpoint(p_ref));
    }
    let vars = formula.variables();
    let p_curr = formula.evaluate(current)?;
    let error = p_ref - p_curr;

    if error.abs() <= GOAL_TOLERANCE {
        let mut kept = Binding::new();
        for v in vars {
            kept.set(v.as_str(), current.get(v).unwrap_or_default())?;
        }
        return Ok(Synthesis {
            goal: p_ref,
            initial_value: p_curr,
            assignments: kept,
            achieved: p_curr,
            candidates: Vec::new(),
            steps: 0,
            noop: true,
        });
    }

    let raising = error > 0.0;
    let step = params.gran * error.abs();
    let passes = |p: f64| {
        if raising {
            p - p_ref > COMPARE_EPS
        } else {
            p_ref - p > COMPARE_EPS
        }
    };

    let mut steps: u64 = 0;
    let mut candidates = Vec::new();
    let mut values = vec![params.offset; vars.len()];

    for pivot in 0..vars.len() {
        values.fill(params.offset);
        let order = std::iter::once(pivot).chain((0..vars.len()).filter(|&j| j != pivot));
        let mut p_new = f64::NAN;
        for j in order {
            let mut n: u64 = 0;
            loop {
                n += 1;
                steps += 1;
                if steps > MAX_ITERATIONS {
                    return Err(SearchError::NonConvergence(MAX_ITERATIONS));
                }
                let (v, clamped) = if raising {
                    let v = params.offset + n as f64 * step;
                    if v >= 1.0 - CLAMP_EPS {
                        (1.0, true)
                    } else {
                        (v, false)
                    }
                } else {
                    let v = params.offset - n as f64 * step;
                    if v <= CLAMP_EPS {
                        (0.0, true)
                    } else {
                        (v, false)
                    }
                };
                values[j] = v;
                p_new = formula.evaluate(&bind(vars, &values)?)?;
                if passes(p_new) || clamped {
                    break;
                }
            }
        }
        if passes(p_new) {
            candidates.push(CandidateStrategy {
                pivot,
                assignments: bind(vars, &values)?,
                achieved: p_new,
                deviation: (p_new - p_ref).abs(),
            });
        }
    }

    if candidates.is_empty() {
        return Err(SearchError::SolutionNotFound);
    }
    let chosen = select_strategy(&candidates, current)?.clone();
    Ok(Synthesis {
        goal: p_ref,
        initial_value: p_curr,
        assignments: chosen.assignments,
        achieved: chosen.achieved,
        candidates,
        steps,
        noop: false,
    })
}

fn bind(vars: &[String], values: &[f64]) -> Result<Binding, FormulaError> {
    let mut b = Binding::new();
    for (name, v) in vars.iter().zip(values) {
        b.set(name.as_str(), *v)?;
    }
    Ok(b)
}

fn l1_change(c: &CandidateStrategy, current: &Binding) -> f64 {
    c.assignments
        .iter()
        .map(|(k, v)| (v - current.get(k).unwrap_or(v)).abs())
        .sum()
}

/// Smallest deviation, then smallest L1 change from `current`, then pivot order.
pub fn select_strategy<'a>(
    candidates: &'a [CandidateStrategy],
    current: &Binding,
) -> Result<&'a CandidateStrategy, SearchError> {
    let mut best = candidates.first().ok_or(SearchError::NoCandidates)?;
    for c in &candidates[1..] {
        let d = c.deviation - best.deviation;
        let better = if d.abs() > TIE_EPS {
            d < 0.0
        } else {
            let l = l1_change(c, current) - l1_change(best, current);
            if l.abs() > TIE_EPS {
                l < 0.0
            } else {
                c.pivot < best.pivot
            }
        };
        if better {
            best = c;
        }
    }
    Ok(best)
}

pub fn timed_search(
    params: &SearchParams,
    formula: &ParametricFormula,
    current: &Binding,
    p_ref: f64,
) -> Result<TimedSearch, SearchError> {
    let start = Instant::now();
    let synthesis = search_for_strategy(params, formula, current, p_ref)?;
    let elapsed_s = start.elapsed().as_secs_f64();
    let steps = synthesis.steps;
    Ok(TimedSearch {
        synthesis,
        elapsed_s,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn b(pairs: &[(&str, f64)]) -> Binding {
        Binding::from_pairs(pairs.iter().copied()).unwrap()
    }

    fn avg() -> ParametricFormula {
        parse_formula("0.5*(p1+p2)").unwrap()
    }

    #[test]
    fn hand_traced_average() {
        let p = SearchParams::new(0.5, 0.5).unwrap();
        let s = search_for_strategy(&p, &avg(), &b(&[("p1", 0.6), ("p2", 0.8)]), 0.9).unwrap();
        assert!(!s.noop);
        assert_eq!(s.assignments.get("p1"), Some(1.0));
        assert_relative_eq!(s.assignments.get("p2").unwrap(), 0.9, epsilon = 1e-12);
        assert_relative_eq!(s.achieved, 0.95, epsilon = 1e-12);
        assert_eq!(s.candidates.len(), 2);
        // pivot p1: 5 steps to clamp, then p2 needs 4; pivot p2 mirrors it
        assert_eq!(s.steps, 18);
    }

    #[test]
    fn already_at_setpoint_is_noop() {
        let p = SearchParams::new(0.5, 0.5).unwrap();
        let cur = b(&[("p1", 0.8), ("p2", 1.0)]);
        let s = timed_search(&p, &avg(), &cur, 0.9).unwrap();
        assert!(s.synthesis.noop);
        assert_eq!(s.steps, 0);
        assert_eq!(s.synthesis.assignments, cur);
    }

    #[test]
    fn unreachable_goal() {
        let f = parse_formula("0.5*p1").unwrap();
        let p = SearchParams::new(0.1, 0.5).unwrap();
        assert_eq!(
            search_for_strategy(&p, &f, &b(&[("p1", 0.2)]), 0.99),
            Err(SearchError::SolutionNotFound)
        );
    }

    #[test]
    fn lowering_when_above_setpoint() {
        let p = SearchParams::new(0.25, 1.0).unwrap();
        let s = search_for_strategy(&p, &avg(), &b(&[("p1", 1.0), ("p2", 1.0)]), 0.6).unwrap();
        assert!(s.achieved < 0.6);
        for (_, v) in s.assignments.iter() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn halving_gran_costs_more_steps() {
        let cur = b(&[("p1", 0.6), ("p2", 0.8)]);
        let coarse =
            timed_search(&SearchParams::new(0.5, 0.5).unwrap(), &avg(), &cur, 0.9).unwrap();
        let fine = timed_search(&SearchParams::new(0.25, 0.5).unwrap(), &avg(), &cur, 0.9).unwrap();
        assert!(fine.steps > coarse.steps);
    }

    #[test]
    fn runaway_search_hits_iteration_cap() {
        let f = parse_formula("0.5*p1").unwrap();
        let p = SearchParams::new(1e-9, 0.0).unwrap();
        assert_eq!(
            search_for_strategy(&p, &f, &b(&[("p1", 0.0)]), 0.99),
            Err(SearchError::NonConvergence(MAX_ITERATIONS))
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(SearchParams::new(0.0, 0.5).is_err());
        assert!(SearchParams::new(0.1, 1.5).is_err());
        let p = SearchParams::new(0.1, 0.5).unwrap();
        assert_eq!(
            search_for_strategy(&p, &avg(), &b(&[("p1", 0.5), ("p2", 0.5)]), 0.0),
            Err(SearchError::InvalidSetpoint(0.0))
        );
        assert!(matches!(
            search_for_strategy(&p, &avg(), &b(&[("p1", 0.5)]), 0.9),
            Err(SearchError::Formula(FormulaError::UnboundVariable(_)))
        ));
    }

    fn cand(pivot: usize, p1: f64, p2: f64, deviation: f64) -> CandidateStrategy {
        CandidateStrategy {
            pivot,
            assignments: b(&[("p1", p1), ("p2", p2)]),
            achieved: 0.0,
            deviation,
        }
    }

    #[test]
    fn selection_rules() {
        let cur = b(&[("p1", 0.5), ("p2", 0.5)]);
        let one = [cand(0, 0.7, 0.5, 0.05)];
        assert_eq!(select_strategy(&one, &cur).unwrap().pivot, 0);
        let two = [cand(0, 0.7, 0.5, 0.05), cand(1, 0.7, 0.5, 0.01)];
        assert_eq!(select_strategy(&two, &cur).unwrap().pivot, 1);
        let tie = [cand(0, 1.0, 0.6, 0.02), cand(1, 0.5, 0.8, 0.02)];
        assert_eq!(select_strategy(&tie, &cur).unwrap().pivot, 1);
        assert_eq!(
            select_strategy(&[], &cur).unwrap_err(),
            SearchError::NoCandidates
        );
    }

    proptest! {
        #[test]
        fn assignments_in_unit_box_and_comparison_holds(
            c1 in 0.0f64..1.0, c2 in 0.0f64..1.0,
            gran in 0.05f64..2.0, offset in 0.0f64..1.0, p_ref in 0.05f64..1.0,
        ) {
            let f = parse_formula("p1*p2 + 0.1*p1").unwrap();
            let cur = b(&[("p1", c1), ("p2", c2)]);
            let p = SearchParams::new(gran, offset).unwrap();
            if let Ok(s) = search_for_strategy(&p, &f, &cur, p_ref) {
                for c in &s.candidates {
                    for (_, v) in c.assignments.iter() {
                        prop_assert!((0.0..=1.0).contains(&v));
                    }
                    prop_assert_eq!(c.achieved, f.evaluate(&c.assignments).unwrap());
                }
                if !s.noop {
                    let err = p_ref - f.evaluate(&cur).unwrap();
                    if err > 0.0 { prop_assert!(s.achieved > p_ref); } else { prop_assert!(s.achieved < p_ref); }
                }
            }
        }

        #[test]
        fn steps_non_increasing_in_gran(g1 in 0.05f64..1.0, g2 in 0.05f64..1.0, c1 in 0.0f64..0.5) {
            let (lo, hi) = if g1 < g2 { (g1, g2) } else { (g2, g1) };
            let cur = b(&[("p1", c1), ("p2", c1)]);
            let f = avg();
            let a = search_for_strategy(&SearchParams::new(lo, 0.3).unwrap(), &f, &cur, 0.9);
            let z = search_for_strategy(&SearchParams::new(hi, 0.3).unwrap(), &f, &cur, 0.9);
            if let (Ok(a), Ok(z)) = (a, z) {
                prop_assert!(a.steps >= z.steps);
            }
        }
    }
}
