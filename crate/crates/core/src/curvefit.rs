//! Least-squares model fitting for pipeline data.
//!
//! Polynomial kinds are solved in closed form through the normal equations.
//! Exponential kinds use Levenberg-Marquardt (damped Gauss-Newton) seeded by a
//! log-linear fit.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_NLS_ITERATIONS: usize = 200;
/// Stop once an accepted step improves SSE by less than this fraction.
pub const NLS_REL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("{kind} needs at least {need} points, got {got}")]
    InsufficientPoints {
        kind: ModelKind,
        need: usize,
        got: usize,
    },
    #[error("expected {expected} inputs, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("singular normal system for {0} (inputs are collinear)")]
    Singular(ModelKind),
    #[error("{kind} fit did not converge within {iterations} iterations")]
    NonConvergence { kind: ModelKind, iterations: usize },
    #[error("non-finite value in data")]
    NonFinite,
    #[error("no candidate kinds given")]
    NoCandidates,
    #[error("every candidate failed: {0}")]
    AllCandidatesFailed(String),
    #[error("unknown model kind `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `slope * x + intercept`
    Linear,
    /// `a * x^2 + b * x + c`
    Quadratic,
    /// `a * exp(b * x)`
    Exponential,
    /// `a * exp(b * x1) + exp(c * x2)`
    SumExp2d,
}

impl ModelKind {
    pub const ONE_D: [ModelKind; 3] = [
        ModelKind::Linear,
        ModelKind::Quadratic,
        ModelKind::Exponential,
    ];

    pub fn n_coefficients(self) -> usize {
        match self {
            ModelKind::Linear | ModelKind::Exponential => 2,
            ModelKind::Quadratic | ModelKind::SumExp2d => 3,
        }
    }

    pub fn arity(self) -> usize {
        match self {
            ModelKind::SumExp2d => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Quadratic => "quadratic",
            ModelKind::Exponential => "exponential",
            ModelKind::SumExp2d => "sum_exp_2d",
        }
    }

    pub fn default_inputs(self) -> Vec<String> {
        match self {
            ModelKind::SumExp2d => vec!["x1".into(), "x2".into()],
            _ => vec!["x".into()],
        }
    }

    pub fn eval(self, c: &[f64], x: &[f64]) -> f64 {
        match self {
            ModelKind::Linear => c[0] * x[0] + c[1],
            ModelKind::Quadratic => (c[0] * x[0] + c[1]) * x[0] + c[2],
            ModelKind::Exponential => c[0] * (c[1] * x[0]).exp(),
            ModelKind::SumExp2d => c[0] * (c[1] * x[0]).exp() + (c[2] * x[1]).exp(),
        }
    }

    /// Partial derivatives of the model with respect to each coefficient.
    fn jacobian_row(self, c: &[f64], x: &[f64], row: &mut [f64]) {
        match self {
            ModelKind::Linear => {
                row[0] = x[0];
                row[1] = 1.0;
            }
            ModelKind::Quadratic => {
                row[0] = x[0] * x[0];
                row[1] = x[0];
                row[2] = 1.0;
            }
            ModelKind::Exponential => {
                let e = (c[1] * x[0]).exp();
                row[0] = e;
                row[1] = c[0] * x[0] * e;
            }
            ModelKind::SumExp2d => {
                let e1 = (c[1] * x[0]).exp();
                row[0] = e1;
                row[1] = c[0] * x[0] * e1;
                row[2] = x[1] * (c[2] * x[1]).exp();
            }
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = FitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "quadratic" => Ok(ModelKind::Quadratic),
            "exponential" => Ok(ModelKind::Exponential),
            "sum_exp_2d" => Ok(ModelKind::SumExp2d),
            other => Err(FitError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: Vec<f64>,
    pub output: f64,
}

impl Sample {
    pub fn new(inputs: Vec<f64>, output: f64) -> Self {
        Self { inputs, output }
    }

    pub fn one(x: f64, y: f64) -> Self {
        Self::new(vec![x], y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub coefficients: Vec<f64>,
    pub input_names: Vec<String>,
    pub rmse: f64,
    pub n_points: usize,
}

impl FittedModel {
    pub fn with_input_names(mut self, names: &[&str]) -> Self {
        self.input_names = names.iter().map(|s| s.to_string()).collect();
        self
    }

    /// `rmse * n / (n - k)`: residual size with a penalty per coefficient.
    pub fn criterion(&self) -> f64 {
        let k = self.kind.n_coefficients();
        self.rmse * self.n_points as f64 / (self.n_points - k) as f64
    }

    pub fn predict(&self, inputs: &[f64]) -> Result<f64, FitError> {
        predict(self, inputs)
    }
}

pub fn predict(model: &FittedModel, inputs: &[f64]) -> Result<f64, FitError> {
    let expected = model.kind.arity();
    if inputs.len() != expected {
        return Err(FitError::Arity {
            expected,
            got: inputs.len(),
        });
    }
    Ok(model.kind.eval(&model.coefficients, inputs))
}

pub fn sse(kind: ModelKind, coefficients: &[f64], points: &[Sample]) -> f64 {
    points
        .iter()
        .map(|p| {
            let r = kind.eval(coefficients, &p.inputs) - p.output;
            r * r
        })
        .sum()
}

/// Gradient of the sum of squared residuals, `2 J^T r`.
pub fn sse_gradient(kind: ModelKind, coefficients: &[f64], points: &[Sample]) -> Vec<f64> {
    let k = kind.n_coefficients();
    let mut g = vec![0.0; k];
    let mut row = vec![0.0; k];
    for p in points {
        kind.jacobian_row(coefficients, &p.inputs, &mut row);
        let r = kind.eval(coefficients, &p.inputs) - p.output;
        for (gi, ji) in g.iter_mut().zip(&row) {
            *gi += 2.0 * ji * r;
        }
    }
    g
}

fn check(points: &[Sample], kind: ModelKind) -> Result<Vec<Sample>, FitError> {
    let need = kind.n_coefficients() + 1;
    if points.len() < need {
        return Err(FitError::InsufficientPoints {
            kind,
            need,
            got: points.len(),
        });
    }
    for p in points {
        if p.inputs.len() != kind.arity() {
            return Err(FitError::Arity {
                expected: kind.arity(),
                got: p.inputs.len(),
            });
        }
        if !p.output.is_finite() || p.inputs.iter().any(|x| !x.is_finite()) {
            return Err(FitError::NonFinite);
        }
    }
    // Sum in a canonical order so the result does not depend on input order.
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.inputs
            .iter()
            .zip(&b.inputs)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(a.output.total_cmp(&b.output))
    });
    Ok(sorted)
}

pub fn fit(points: &[Sample], kind: ModelKind) -> Result<FittedModel, FitError> {
    let pts = check(points, kind)?;
    let coefficients = match kind {
        ModelKind::Linear | ModelKind::Quadratic => fit_polynomial(&pts, kind)?,
        ModelKind::Exponential | ModelKind::SumExp2d => {
            let seed = initial_guess(kind, &pts);
            levenberg_marquardt(kind, &pts, seed)?
        }
    };
    let rmse = (sse(kind, &coefficients, &pts) / pts.len() as f64).sqrt();
    Ok(FittedModel {
        kind,
        coefficients,
        input_names: kind.default_inputs(),
        rmse,
        n_points: pts.len(),
    })
}

/// Fits every candidate and keeps the lowest `criterion()`; near-ties go to
/// the kind with fewer coefficients, then to the earlier candidate.
pub fn fit_best(points: &[Sample], kinds: &[ModelKind]) -> Result<FittedModel, FitError> {
    if kinds.is_empty() {
        return Err(FitError::NoCandidates);
    }
    let scale = points
        .iter()
        .map(|p| p.output.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut best: Option<FittedModel> = None;
    let mut failures = Vec::new();
    for &kind in kinds {
        let m = match fit(points, kind) {
            Ok(m) => m,
            Err(e) => {
                log::debug!("{kind} fit failed: {e}");
                failures.push(format!("{kind}: {e}"));
                continue;
            }
        };
        best = Some(match best {
            None => m,
            Some(b) => {
                let (cm, cb) = (m.criterion(), b.criterion());
                let tol = 1e-9 * cm.max(cb) + 1e-12 * scale;
                let wins = if (cm - cb).abs() <= tol {
                    m.kind.n_coefficients() < b.kind.n_coefficients()
                } else {
                    cm < cb
                };
                if wins {
                    m
                } else {
                    b
                }
            }
        });
    }
    best.ok_or_else(|| FitError::AllCandidatesFailed(failures.join("; ")))
}

fn fit_polynomial(pts: &[Sample], kind: ModelKind) -> Result<Vec<f64>, FitError> {
    let degree = kind.n_coefficients() - 1;
    let n = pts.len() as f64;
    // Work in z = (x - m) / s to keep the normal matrix well conditioned.
    let m = pts.iter().map(|p| p.inputs[0]).sum::<f64>() / n;
    let s = pts
        .iter()
        .map(|p| (p.inputs[0] - m).abs())
        .fold(0.0, f64::max);
    if s == 0.0 {
        return Err(FitError::Singular(kind));
    }
    let k = degree + 1;
    let mut a = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for p in pts {
        let z = (p.inputs[0] - m) / s;
        let powers: Vec<f64> = (0..k).map(|i| z.powi(i as i32)).collect();
        for i in 0..k {
            rhs[i] += powers[i] * p.output;
            for j in 0..k {
                a[i][j] += powers[i] * powers[j];
            }
        }
    }
    // z-basis coefficients, lowest power first
    let w = solve(a, rhs).ok_or(FitError::Singular(kind))?;
    Ok(match degree {
        1 => {
            let slope = w[1] / s;
            vec![slope, w[0] - slope * m]
        }
        _ => {
            let a2 = w[2] / (s * s);
            let b1 = w[1] / s;
            vec![a2, b1 - 2.0 * a2 * m, w[0] - b1 * m + a2 * m * m]
        }
    })
}

/// Gaussian elimination with partial pivoting. `None` when singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Least-squares line through `(x, y)` pairs; `None` if the x values coincide.
fn log_line(pairs: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pairs.len() < 2 {
        return None;
    }
    let pts: Vec<Sample> = pairs.iter().map(|&(x, y)| Sample::one(x, y)).collect();
    let c = fit_polynomial(&pts, ModelKind::Linear).ok()?;
    Some((c[0], c[1]))
}

/// Starting point for the iterative kinds.
pub fn initial_guess(kind: ModelKind, points: &[Sample]) -> Vec<f64> {
    let max_y = points
        .iter()
        .map(|p| p.output)
        .fold(f64::NEG_INFINITY, f64::max);
    let positive: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.output > 0.0)
        .map(|p| (p.inputs[0], p.output.ln()))
        .collect();
    let (a, b) = match log_line(&positive) {
        Some((slope, icpt)) => (icpt.exp(), slope),
        None => (max_y, -1.0),
    };
    match kind {
        ModelKind::SumExp2d => {
            // second term from whatever the first leaves over, through the origin in log space
            let rest: Vec<(f64, f64)> = points
                .iter()
                .map(|p| (p.inputs[1], p.output - a * (b * p.inputs[0]).exp()))
                .filter(|&(x2, r)| r > 0.0 && x2 != 0.0)
                .collect();
            let num: f64 = rest.iter().map(|&(x2, r)| x2 * r.min(1.0).ln()).sum();
            let den: f64 = rest.iter().map(|&(x2, _)| x2 * x2).sum();
            let c = if rest.len() >= 2 && den > 0.0 && num < 0.0 {
                num / den
            } else {
                -1.0
            };
            vec![a, b, c]
        }
        _ => vec![a, b],
    }
}

fn levenberg_marquardt(
    kind: ModelKind,
    pts: &[Sample],
    mut coeffs: Vec<f64>,
) -> Result<Vec<f64>, FitError> {
    let k = coeffs.len();
    let floor = 1e-30
        * pts
            .iter()
            .map(|p| p.output * p.output)
            .sum::<f64>()
            .max(1e-300);
    let mut current = sse(kind, &coeffs, pts);
    if !current.is_finite() {
        coeffs = vec![1.0; k];
        coeffs[1] = -1.0;
        current = sse(kind, &coeffs, pts);
    }
    let mut lambda = 1e-3;
    let mut row = vec![0.0; k];

    for _ in 0..MAX_NLS_ITERATIONS {
        if current <= floor {
            return Ok(coeffs);
        }
        let mut jtj = vec![vec![0.0; k]; k];
        let mut jtr = vec![0.0; k];
        for p in pts {
            kind.jacobian_row(&coeffs, &p.inputs, &mut row);
            let r = kind.eval(&coeffs, &p.inputs) - p.output;
            for i in 0..k {
                jtr[i] += row[i] * r;
                for j in 0..k {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        let diag_max = (0..k).map(|i| jtj[i][i]).fold(0.0, f64::max);
        if diag_max == 0.0 || !diag_max.is_finite() {
            return Err(FitError::NonConvergence {
                kind,
                iterations: MAX_NLS_ITERATIONS,
            });
        }

        let accepted = loop {
            let mut m = jtj.clone();
            for i in 0..k {
                m[i][i] += lambda * jtj[i][i].max(1e-12 * diag_max);
            }
            let neg: Vec<f64> = jtr.iter().map(|g| -g).collect();
            if let Some(delta) = solve(m, neg) {
                let trial: Vec<f64> = coeffs.iter().zip(&delta).map(|(c, d)| c + d).collect();
                let s = sse(kind, &trial, pts);
                if s.is_finite() && s < current {
                    lambda = (lambda / 10.0).max(1e-15);
                    break Some((trial, s));
                }
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break None;
            }
        };
        match accepted {
            // No descent direction left: a stationary point.
            None => return Ok(coeffs),
            Some((trial, s)) => {
                let improvement = (current - s) / current;
                coeffs = trial;
                current = s;
                if improvement < NLS_REL_TOLERANCE {
                    return Ok(coeffs);
                }
            }
        }
    }
    Err(FitError::NonConvergence {
        kind,
        iterations: MAX_NLS_ITERATIONS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn line(xs: impl Iterator<Item = f64>, f: impl Fn(f64) -> f64) -> Vec<Sample> {
        xs.map(|x| Sample::one(x, f(x))).collect()
    }

    fn reference_model() -> FittedModel {
        FittedModel {
            kind: ModelKind::SumExp2d,
            coefficients: vec![677.0, -3000.0, -2874.0],
            input_names: vec!["gran".into(), "offset".into()],
            rmse: 0.0,
            n_points: 0,
        }
    }

    fn reference_grid() -> Vec<Sample> {
        let m = reference_model();
        (0..200)
            .map(|i| {
                let g = 0.002 * (i % 20) as f64 / 19.0;
                let o = 0.002 * (i / 20) as f64 / 9.0;
                Sample::new(vec![g, o], m.predict(&[g, o]).unwrap())
            })
            .collect()
    }

    #[test]
    fn exact_line() {
        let m = fit(
            &line((0..=10).map(f64::from), |x| 2.0 * x + 1.0),
            ModelKind::Linear,
        )
        .unwrap();
        assert_relative_eq!(m.coefficients[0], 2.0, epsilon = 1e-9);
        assert_relative_eq!(m.coefficients[1], 1.0, epsilon = 1e-9);
        assert!(m.rmse < 1e-9);
        assert_relative_eq!(m.predict(&[3.0]).unwrap(), 7.0, epsilon = 1e-9);
    }

    #[test]
    fn constant_data() {
        let m = fit(&line((0..6).map(f64::from), |_| 5.0), ModelKind::Linear).unwrap();
        assert!(m.coefficients[0].abs() < 1e-12);
        assert_relative_eq!(m.coefficients[1], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_exponent_predicts_scale() {
        let m = FittedModel {
            kind: ModelKind::Exponential,
            coefficients: vec![1.0, 0.0],
            input_names: vec!["x".into()],
            rmse: 0.0,
            n_points: 3,
        };
        for x in [-4.0, 0.0, 17.5] {
            assert_eq!(m.predict(&[x]).unwrap(), 1.0);
        }
    }

    #[test]
    fn reference_model_at_origin() {
        assert_eq!(reference_model().predict(&[0.0, 0.0]).unwrap(), 678.0);
        assert_eq!(
            reference_model().predict(&[0.0]),
            Err(FitError::Arity {
                expected: 2,
                got: 1
            })
        );
    }

    #[test]
    fn recovers_reference_model() {
        let m = fit(&reference_grid(), ModelKind::SumExp2d).unwrap();
        for (got, want) in m.coefficients.iter().zip([677.0, -3000.0, -2874.0]) {
            assert!(((got - want) / want).abs() < 0.05, "{:?}", m.coefficients);
        }
        assert!(m.rmse < 1e-6 * 678.0, "rmse {}", m.rmse);
    }

    #[test]
    fn exponential_recovery() {
        let pts = line((0..30).map(|i| 60.0 + 3.0 * i as f64), |x| {
            0.4 * (-0.02 * x).exp()
        });
        let m = fit(&pts, ModelKind::Exponential).unwrap();
        assert_relative_eq!(m.coefficients[0], 0.4, max_relative = 1e-6);
        assert_relative_eq!(m.coefficients[1], -0.02, max_relative = 1e-6);
    }

    #[test]
    fn exponential_with_nonpositive_data_uses_fallback_seed() {
        let pts = line((0..8).map(f64::from), |x| -(0.5f64 * x).exp());
        assert_eq!(
            initial_guess(ModelKind::Exponential, &pts),
            vec![-1.0, -1.0]
        );
        let m = fit(&pts, ModelKind::Exponential).unwrap();
        assert_relative_eq!(m.coefficients[0], -1.0, max_relative = 1e-5);
        assert_relative_eq!(m.coefficients[1], 0.5, max_relative = 1e-5);
    }

    #[test]
    fn errors() {
        let two = line([0.0, 1.0].into_iter(), |x| x);
        assert!(matches!(
            fit(&two, ModelKind::Linear),
            Err(FitError::InsufficientPoints {
                need: 3,
                got: 2,
                ..
            })
        ));
        let same_x = line([2.0; 5].into_iter(), |x| x);
        assert_eq!(
            fit(&same_x, ModelKind::Linear),
            Err(FitError::Singular(ModelKind::Linear))
        );
        let two_x = line([1.0, 1.0, 2.0, 2.0].into_iter(), |x| x);
        assert_eq!(
            fit(&two_x, ModelKind::Quadratic),
            Err(FitError::Singular(ModelKind::Quadratic))
        );
        assert!(matches!(
            fit(&reference_grid(), ModelKind::Linear),
            Err(FitError::Arity {
                expected: 1,
                got: 2
            })
        ));
        assert_eq!(fit_best(&two, &[]), Err(FitError::NoCandidates));
        assert!(matches!(
            fit_best(&two, &[ModelKind::Quadratic]),
            Err(FitError::AllCandidatesFailed(_))
        ));
    }

    #[test]
    fn best_picks_quadratic_for_quadratic_data() {
        let pts = line((0..12).map(f64::from), |x| 0.5 * x * x - 3.0 * x + 2.0);
        let m = fit_best(&pts, &[ModelKind::Linear, ModelKind::Quadratic]).unwrap();
        assert_eq!(m.kind, ModelKind::Quadratic);
    }

    #[test]
    fn best_prefers_fewer_coefficients_on_ties() {
        let pts = line((0..12).map(f64::from), |x| 2.0 * x + 1.0);
        let m = fit_best(&pts, &[ModelKind::Quadratic, ModelKind::Linear]).unwrap();
        assert_eq!(m.kind, ModelKind::Linear);
        let three = line([0.0, 1.0, 3.0].into_iter(), |x| x * x);
        assert_eq!(
            fit_best(&three, &[ModelKind::Linear]).unwrap().kind,
            ModelKind::Linear
        );
    }

    #[test]
    fn gradient_matches_finite_differences_at_seed() {
        let pts = reference_grid();
        let seed = initial_guess(ModelKind::SumExp2d, &pts);
        let g = sse_gradient(ModelKind::SumExp2d, &seed, &pts);
        for i in 0..3 {
            let h = 1e-6 * seed[i].abs().max(1.0);
            let mut up = seed.clone();
            let mut dn = seed.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (sse(ModelKind::SumExp2d, &up, &pts) - sse(ModelKind::SumExp2d, &dn, &pts))
                / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-12),
                "coef {i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [
            ModelKind::Linear,
            ModelKind::Quadratic,
            ModelKind::Exponential,
            ModelKind::SumExp2d,
        ] {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("cubic".parse::<ModelKind>().is_err());
    }

    proptest! {
        #[test]
        fn polynomial_fit_is_a_local_minimum(
            ys in prop::collection::vec(-5.0f64..5.0, 6..20),
            quad in prop::bool::ANY,
        ) {
            let kind = if quad { ModelKind::Quadratic } else { ModelKind::Linear };
            let pts: Vec<Sample> = ys.iter().enumerate().map(|(i, y)| Sample::one(i as f64, *y)).collect();
            let m = fit(&pts, kind).unwrap();
            let base = sse(kind, &m.coefficients, &pts);
            for i in 0..m.coefficients.len() {
                for d in [-1e-3, 1e-3] {
                    let mut c = m.coefficients.clone();
                    c[i] += d;
                    prop_assert!(sse(kind, &c, &pts) >= base * (1.0 - 1e-12));
                }
            }
        }

        #[test]
        fn permutation_invariant(
            ys in prop::collection::vec(0.1f64..5.0, 6..15),
            seed in any::<u64>(),
        ) {
            let pts: Vec<Sample> = ys.iter().enumerate().map(|(i, y)| Sample::one(i as f64 * 0.5, *y)).collect();
            let mut shuffled = pts.clone();
            let n = shuffled.len();
            for i in 0..n {
                let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) % n as u64) as usize;
                shuffled.swap(i, j);
            }
            for kind in ModelKind::ONE_D {
                match (fit(&pts, kind), fit(&shuffled, kind)) {
                    (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                    (Err(a), Err(b)) => prop_assert_eq!(a, b),
                    (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
                }
            }
        }

        #[test]
        fn exact_families_reproduce(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
            let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
            let q = line(xs.iter().copied(), |x| a * x * x + b * x + c);
            let m = fit(&q, ModelKind::Quadratic).unwrap();
            for p in &q {
                let y = m.predict(&p.inputs).unwrap();
                prop_assert!((y - p.output).abs() <= 1e-6 * p.output.abs().max(1.0));
            }
        }
    }
}
