//! Numerical optimal experiment design.
//!
//! The bound `B(λ) = tr{F(λ)⁻¹}` with `F = Σ_γ λ_γ Σ_α w_α a_α a_αᵀ` is convex
//! in `λ`. Its derivatives are
//!
//! ```text
//! ∂B/∂λ_γ      = −Σ_{α∈γ} w_α |F⁻¹a_α|²
//! ∂²B/∂λ_γ∂λ_δ = 2 Σ_{α∈γ, β∈δ} w_α w_β (a_αᵀF⁻¹a_β)(a_αᵀF⁻²a_β)
//! ```
//!
//! where `w_α = 1/p_α` at a fixed state, `g_α = ⟨1/p_α⟩` for the averaged
//! Fisher information, and the rows `a_α` may equally be the Cholesky
//! vectors `z_α` (see [`crate::cholesky`]). [`LinearFisherModel`] captures
//! all three cases.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::fisher::{weighted_gram, Design, FisherBundle, PROBABILITY_FLOOR};
use crate::linalg::SymInverse;
use crate::repr::{probabilities, ExperimentSetup};
use crate::simplex::{minimize_on_simplex, Evaluation, SimplexObjective, Solution, Warning};
use crate::{Error, Result};

pub use crate::simplex::OptimizerSettings;

/// Fisher information linear in the design: rows, their outcome weights and
/// the configuration blocks.
#[derive(Debug, Clone)]
pub struct LinearFisherModel {
    rows: DMatrix<f64>,
    weights: DVector<f64>,
    blocks: Vec<Range<usize>>,
    min_probability: f64,
}

impl LinearFisherModel {
    pub fn new(rows: DMatrix<f64>, weights: DVector<f64>, blocks: Vec<Range<usize>>) -> Result<Self> {
        if weights.len() != rows.nrows() {
            return Err(Error::LengthMismatch {
                got: weights.len(),
                expected: rows.nrows(),
            });
        }
        if blocks.last().map(|b| b.end) != Some(rows.nrows()) {
            return Err(Error::InvalidSetup("blocks do not cover all outcomes".into()));
        }
        Ok(LinearFisherModel {
            rows,
            weights,
            blocks,
            min_probability: f64::NAN,
        })
    }

    /// Weights `1/p_α(r)` at a Bloch vector; every probability must exceed
    /// the floor since every configuration may receive weight.
    pub fn at_state(setup: &ExperimentSetup, r: &DVector<f64>) -> Result<Self> {
        let p = probabilities(setup, r)?;
        let weights = probability_weights(setup, &p)?;
        let mut model = Self::new(setup.a().clone(), weights, setup.blocks().to_vec())?;
        model.min_probability = p.min();
        Ok(model)
    }

    /// Weights `g_α = ⟨1/p_α⟩` from an averaging context.
    pub fn averaged(setup: &ExperimentSetup, g: &DVector<f64>) -> Result<Self> {
        Self::new(setup.a().clone(), g.clone(), setup.blocks().to_vec())
    }

    pub(crate) fn with_min_probability(mut self, p: f64) -> Self {
        self.min_probability = p;
        self
    }

    pub fn num_configs(&self) -> usize {
        self.blocks.len()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    fn outcome_weights(&self, lambda: &[f64]) -> DVector<f64> {
        let mut w = self.weights.clone();
        for (b, &l) in self.blocks.iter().zip(lambda) {
            for i in b.clone() {
                w[i] *= l;
            }
        }
        w
    }

    /// Fisher matrix at a design.
    pub fn fisher(&self, design: &Design) -> Result<FisherBundle> {
        design.check_len(self.num_configs())?;
        Ok(FisherBundle::from_matrix(weighted_gram(
            &self.rows,
            &self.outcome_weights(design.weights()),
        )))
    }

    fn inverse(&self, lambda: &[f64]) -> SymInverse {
        SymInverse::new(&weighted_gram(&self.rows, &self.outcome_weights(lambda)))
    }

    /// `(B, ∂B, ∂²B)`; `None` when `F` is singular.
    fn derivatives(&self, lambda: &[f64], hessian: bool) -> Option<Evaluation> {
        let inv = self.inverse(lambda);
        let f_inv = inv.inverse_power(1)?;
        let value = inv.trace_inverse();
        let y = &self.rows * &f_inv;
        let n = self.rows.nrows();
        let m = self.num_configs();
        let mut gradient = DVector::zeros(m);
        for (g, b) in self.blocks.iter().enumerate() {
            gradient[g] = -b
                .clone()
                .map(|i| self.weights[i] * y.row(i).norm_squared())
                .sum::<f64>();
        }
        let mut h = DMatrix::zeros(m, m);
        if hessian {
            let c = &y * self.rows.transpose();
            let yy = &y * y.transpose();
            let owner: Vec<usize> = self
                .blocks
                .iter()
                .enumerate()
                .flat_map(|(g, b)| b.clone().map(move |_| g))
                .collect();
            for i in 0..n {
                for j in 0..n {
                    h[(owner[i], owner[j])] +=
                        2.0 * self.weights[i] * self.weights[j] * c[(i, j)] * yy[(i, j)];
                }
            }
            h = 0.5 * (&h + h.transpose());
        }
        Some(Evaluation {
            value,
            gradient,
            hessian: h,
        })
    }
}

fn probability_weights(setup: &ExperimentSetup, p: &DVector<f64>) -> Result<DVector<f64>> {
    for (g, b) in setup.blocks().iter().enumerate() {
        for i in b.clone() {
            if p[i] < PROBABILITY_FLOOR {
                return Err(Error::SingularStatistics {
                    config: setup.configs()[g].label.clone(),
                    outcome: i - b.start,
                    probability: p[i],
                });
            }
        }
    }
    Ok(p.map(|x| 1.0 / x))
}

impl SimplexObjective for LinearFisherModel {
    fn dimension(&self) -> usize {
        self.num_configs()
    }

    fn value(&self, lambda: &[f64]) -> f64 {
        self.inverse(lambda).trace_inverse()
    }

    fn evaluate(&self, lambda: &[f64]) -> Result<Evaluation> {
        self.derivatives(lambda, true).ok_or(Error::SingularFisher)
    }
}

/// `∇J = η𝟙 + ∂B/∂λ`.
pub fn cost_gradient(model: &LinearFisherModel, design: &Design, eta: f64) -> Result<DVector<f64>> {
    design.check_len(model.num_configs())?;
    let ev = model
        .derivatives(design.weights(), false)
        .ok_or(Error::SingularFisher)?;
    Ok(ev.gradient.add_scalar(eta))
}

/// Hessian of `J` (the multiplier term is linear and drops out).
pub fn cost_hessian(model: &LinearFisherModel, design: &Design) -> Result<DMatrix<f64>> {
    design.check_len(model.num_configs())?;
    Ok(model
        .derivatives(design.weights(), true)
        .ok_or(Error::SingularFisher)?
        .hessian)
}

/// Minimizes `tr{F⁻¹}` over the simplex.
pub fn optimize_design(model: &LinearFisherModel, settings: &OptimizerSettings) -> Result<Solution> {
    let m = model.num_configs();
    let start = settings.initial.clone().unwrap_or_else(|| Design::uniform(m));
    start.check_len(m)?;
    if !model.value(start.weights()).is_finite() {
        return Err(Error::SingularFisher);
    }
    let mut sol = minimize_on_simplex(model, settings)?;
    if model.min_probability < 1e-9 {
        sol.warnings.push(Warning::NearBoundaryState {
            min_probability: model.min_probability,
        });
    }
    Ok(sol)
}

/// State-specific OED at Bloch vector `r`.
pub fn optimize_design_at_state(
    setup: &ExperimentSetup,
    r: &DVector<f64>,
    settings: &OptimizerSettings,
) -> Result<Solution> {
    optimize_design(&LinearFisherModel::at_state(setup, r)?, settings)
}

/// Integer shot counts for a design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShotAllocation {
    pub shots: Vec<u64>,
    /// A configuration with positive weight received no shots.
    pub starved: bool,
}

impl ShotAllocation {
    pub fn total(&self) -> u64 {
        self.shots.iter().sum()
    }
}

/// Largest-remainder rounding of `N_tot λ`; ties go to the lower index.
pub fn round_design(design: &Design, n_tot: u64) -> ShotAllocation {
    let exact: Vec<f64> = design.weights().iter().map(|w| w * n_tot as f64).collect();
    let mut shots: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = shots.iter().sum();
    let mut order: Vec<usize> = (0..shots.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n_tot.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        shots[i] += 1;
        left -= 1;
    }
    let starved = shots
        .iter()
        .zip(design.weights())
        .any(|(&s, &w)| w > 0.0 && s == 0);
    ShotAllocation { shots, starved }
}
