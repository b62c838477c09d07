//! Newton minimization on the probability simplex.
//!
//! Minimizes a smooth objective `J(λ)` subject to `λ_γ ≥ 0`, `Σλ_γ = 1`.
//! Each iteration solves the equality-constrained Newton system
//!
//! ```text
//! [H_WW 1] [Δ]   [−g_W]
//! [1ᵀ   0] [ν] = [  0 ]
//! ```
//!
//! on a working set `W` of free weights, steps with a fraction-to-boundary
//! rule and Armijo backtracking, and falls back to the projected gradient
//! whenever the Newton direction is not a descent direction. Weights that
//! reach the boundary are set to exactly zero and released again when their
//! multiplier says the objective would decrease.
//!
//! Convergence is declared when the KKT residual — the spread of the
//! gradient over free weights, plus any negative multipliers of bound
//! weights — falls below the tolerance relative to the Lagrange multiplier.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::fisher::Design;
use crate::{Error, Result};

/// Value, gradient and Hessian of an objective on the simplex.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

pub trait SimplexObjective {
    /// Number of weights.
    fn dimension(&self) -> usize;
    /// Objective value; `+∞` where undefined (e.g. singular Fisher matrix).
    fn value(&self, lambda: &[f64]) -> f64;
    /// Full evaluation at a point with finite value.
    fn evaluate(&self, lambda: &[f64]) -> Result<Evaluation>;
}

/// Settings shared by all simplex optimizations.
#[derive(Debug, Clone)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    /// Bound on the KKT residual relative to the multiplier.
    pub tolerance: f64,
    /// Starting point; uniform when `None`.
    pub initial: Option<Design>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iterations: 500,
            tolerance: 1e-9,
            initial: None,
        }
    }
}

/// Non-fatal diagnostics attached to a design.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Warning {
    /// Some configurations receive zero weight.
    BoundaryDesign { configs: Vec<usize> },
    /// Some outcome probability is tiny; the bound is near-singular.
    NearBoundaryState { min_probability: f64 },
    /// The line search could not decrease the objective further; the
    /// returned point meets a loosened tolerance.
    Stalled { residual: f64 },
    /// The Fisher matrix is close to singular.
    IllConditioned { min_eigenvalue: f64 },
}

/// An optimized (or closed-form) design with diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct Solution {
    pub design: Design,
    /// Objective value at `design`.
    pub objective: f64,
    /// Lagrange multiplier of the sum constraint, `η = −∂J/∂λ_γ` on the
    /// free weights.
    pub multiplier: f64,
    pub iterations: usize,
    /// Relative KKT residual at `design`.
    pub residual: f64,
    pub warnings: Vec<Warning>,
}

impl Solution {
    /// A closed-form result (no iterations).
    pub fn closed_form(design: Design, objective: f64, warnings: Vec<Warning>) -> Self {
        let mut warnings = warnings;
        push_boundary_warning(&design, &mut warnings);
        Solution {
            design,
            objective,
            multiplier: f64::NAN,
            iterations: 0,
            residual: 0.0,
            warnings,
        }
    }

    pub fn weights(&self) -> &[f64] {
        self.design.weights()
    }
}

fn push_boundary_warning(design: &Design, warnings: &mut Vec<Warning>) {
    let zeros: Vec<usize> = design
        .weights()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w == 0.0)
        .map(|(i, _)| i)
        .collect();
    if !zeros.is_empty() {
        warnings.push(Warning::BoundaryDesign { configs: zeros });
    }
}

/// Multiplier and relative KKT residual at `lambda`.
pub fn kkt_residual(lambda: &[f64], gradient: &DVector<f64>) -> (f64, f64) {
    let free: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 0.0).collect();
    let eta = free.iter().map(|&i| gradient[i]).sum::<f64>() / free.len() as f64;
    let mut sq = 0.0;
    for (i, &l) in lambda.iter().enumerate() {
        let r = gradient[i] - eta;
        // Free weights need r = 0; weights at zero only violate when r < 0.
        if l > 0.0 || r < 0.0 {
            sq += r * r;
        }
    }
    let norm = sq.sqrt();
    let rel = if norm == 0.0 { 0.0 } else { norm / eta.abs() };
    (eta, rel)
}

/// Solves the equality-constrained Newton system on `set`.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>, set: &[usize], m: usize) -> Option<DVector<f64>> {
    let k = set.len();
    let scale = set.iter().map(|&i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    for shift in [0.0, 1e-10, 1e-6] {
        let mut kkt = DMatrix::zeros(k + 1, k + 1);
        let mut rhs = DVector::zeros(k + 1);
        for (a, &i) in set.iter().enumerate() {
            for (b, &j) in set.iter().enumerate() {
                kkt[(a, b)] = h[(i, j)];
            }
            kkt[(a, a)] += shift * scale;
            kkt[(a, k)] = 1.0;
            kkt[(k, a)] = 1.0;
            rhs[a] = -g[i];
        }
        if let Some(sol) = kkt.lu().solve(&rhs) {
            if sol.iter().all(|x| x.is_finite()) {
                let mut d = DVector::zeros(m);
                for (a, &i) in set.iter().enumerate() {
                    d[i] = sol[a];
                }
                if tangent_slope(&d, g, set) < 0.0 {
                    return Some(d);
                }
            }
        }
    }
    None
}

/// `d·g` with the mean of `g` over `set` removed. Directions along the
/// simplex sum to zero, so this is the same slope without the cancellation
/// of a large common gradient component.
fn tangent_slope(d: &DVector<f64>, g: &DVector<f64>, set: &[usize]) -> f64 {
    let mean = set.iter().map(|&i| g[i]).sum::<f64>() / set.len() as f64;
    set.iter().map(|&i| d[i] * (g[i] - mean)).sum()
}

/// Steepest descent within the tangent space of `set`.
fn projected_gradient(g: &DVector<f64>, set: &[usize], m: usize) -> DVector<f64> {
    let mean = set.iter().map(|&i| g[i]).sum::<f64>() / set.len() as f64;
    let mut d = DVector::zeros(m);
    for &i in set {
        d[i] = -(g[i] - mean);
    }
    let norm = d.amax();
    if norm > 0.0 {
        d /= norm;
        d *= 0.1;
    }
    d
}

/// Picks a working set and search direction.
/// Returns the direction and whether it is a Newton step.
fn search_direction(lambda: &[f64], ev: &Evaluation, eta: f64, tol: f64) -> Option<(DVector<f64>, bool)> {
    let m = lambda.len();
    let g = &ev.gradient;
    let set: Vec<usize> = (0..m)
        .filter(|&i| lambda[i] > 0.0 || g[i] - eta < -tol * eta.abs())
        .collect();
    for use_newton in [true, false] {
        let mut work = set.clone();
        loop {
            if work.len() < 2 {
                break;
            }
            let d = if use_newton {
                match newton_direction(&ev.hessian, g, &work, m) {
                    Some(d) => d,
                    None => break,
                }
            } else {
                projected_gradient(g, &work, m)
            };
            // A bound weight cannot move into negative territory; drop it.
            let blocked: Vec<usize> = work
                .iter()
                .copied()
                .filter(|&i| lambda[i] == 0.0 && d[i] < 0.0)
                .collect();
            if blocked.is_empty() {
                if tangent_slope(&d, g, &work) < 0.0 {
                    return Some((d, use_newton));
                }
                break;
            }
            work.retain(|i| !blocked.contains(i));
        }
    }
    None
}

/// Minimizes `objective` on the simplex starting from `settings.initial`.
pub fn minimize_on_simplex<O: SimplexObjective + ?Sized>(
    objective: &O,
    settings: &OptimizerSettings,
) -> Result<Solution> {
    let m = objective.dimension();
    let initial = settings.initial.clone().unwrap_or_else(|| Design::uniform(m));
    initial.check_len(m)?;
    if !(settings.tolerance > 0.0) {
        return Err(Error::InvalidDesign("tolerance must be positive".into()));
    }
    let mut lambda = initial.weights().to_vec();
    let mut value = objective.value(&lambda);
    if !value.is_finite() {
        return Err(Error::InvalidDesign(
            "objective is not finite at the initial design".into(),
        ));
    }
    let tol = settings.tolerance;
    let mut residual = f64::INFINITY;
    let mut eta = f64::NAN;
    let mut warnings = Vec::new();
    for iter in 0..=settings.max_iterations {
        let ev = objective.evaluate(&lambda)?;
        value = ev.value;
        (eta, residual) = kkt_residual(&lambda, &ev.gradient);
        if residual < tol || m == 1 {
            return Ok(finish(lambda, value, eta, iter, residual, warnings));
        }
        if iter == settings.max_iterations {
            break;
        }
        let Some((dir, newton)) = search_direction(&lambda, &ev, eta, tol) else {
            break;
        };
        let slope = tangent_slope(&dir, &ev.gradient, &(0..m).collect::<Vec<_>>());
        let mut alpha_max = f64::INFINITY;
        let mut blocking = None;
        for i in 0..m {
            if dir[i] < 0.0 {
                let a = lambda[i] / -dir[i];
                if a < alpha_max {
                    alpha_max = a;
                    blocking = Some(i);
                }
            }
        }
        let mut alpha = alpha_max.min(1.0);
        let mut accepted = None;
        // A full Newton step whose predicted decrease is below the resolution
        // of the objective is taken as is: the gradient, not the value,
        // decides convergence there.
        if newton && alpha_max > 1.0 && -slope < 1e-10 * value.abs() {
            let trial: Vec<f64> = (0..m).map(|i| lambda[i] + dir[i]).collect();
            let f = objective.value(&trial);
            if f.is_finite() {
                accepted = Some((trial, f));
            }
        }
        for _ in 0..if accepted.is_some() { 0 } else { 80 } {
            let hit = alpha >= alpha_max;
            let mut trial: Vec<f64> = (0..m).map(|i| (lambda[i] + alpha * dir[i]).max(0.0)).collect();
            if hit {
                if let Some(b) = blocking {
                    trial[b] = 0.0;
                }
            }
            let sum: f64 = trial.iter().sum();
            for t in &mut trial {
                *t /= sum;
            }
            let f = objective.value(&trial);
            // Near the optimum the decrease drops below rounding; allow a few
            // ulps of slack so Newton can finish on the gradient criterion.
            let slack = 8.0 * f64::EPSILON * value.abs();
            if f.is_finite() && f <= value + 1e-4 * alpha * slope + slack {
                accepted = Some((trial, f));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, f)) => {
                let no_progress = trial == lambda;
                lambda = trial;
                value = f;
                if no_progress {
                    break;
                }
            }
            None => break,
        }
    }
    // No further decrease possible: accept if the point is stationary to a
    // loosened tolerance, otherwise report failure with the best iterate.
    if residual < tol.sqrt() {
        warnings.push(Warning::Stalled { residual });
        return Ok(finish(lambda, value, eta, settings.max_iterations, residual, warnings));
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iterations,
        residual,
        best: lambda,
    })
}

fn finish(
    lambda: Vec<f64>,
    value: f64,
    eta: f64,
    iterations: usize,
    residual: f64,
    mut warnings: Vec<Warning>,
) -> Solution {
    let design = Design::normalized(lambda).expect("iterates stay on the simplex");
    push_boundary_warning(&design, &mut warnings);
    Solution {
        design,
        objective: value,
        multiplier: -eta,
        iterations,
        residual,
        warnings,
    }
}
