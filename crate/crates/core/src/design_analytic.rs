//! Closed-form OED for minimal tomography.
//!
//! With `B = Σ_γ s_γ/λ_γ`, `s_γ = Σ_α′ b_α′γ`, the Lagrange condition gives
//! `λ_γ ∝ √s_γ`. For binary configurations `D` is diagonal and
//! `s_γ = d_γ p_γ(1 − p_γ)`.

use nalgebra::DVector;

use crate::fisher::{crb_from_block_sums, minimal_kernel, Design};
use crate::repr::{probabilities, ExperimentSetup};
use crate::simplex::{Solution, Warning};
use crate::{Error, Result};

/// Block sums this far below zero are rounding noise and clamp to 0.
const NEGATIVE_SLACK: f64 = 1e-12;

/// `λ_γ ∝ √s_γ`, with the bound `Σ s_γ/λ_γ` as objective.
pub(crate) fn square_root_design(sums: &[f64], warnings: Vec<Warning>) -> Result<Solution> {
    let scale = sums.iter().fold(0.0f64, |a, &s| a.max(s.abs())).max(1.0);
    let mut clean = Vec::with_capacity(sums.len());
    for (g, &s) in sums.iter().enumerate() {
        if !s.is_finite() || s < -NEGATIVE_SLACK * scale {
            return Err(Error::DegenerateDesign { config: g, value: s });
        }
        clean.push(s.max(0.0));
    }
    let roots: Vec<f64> = clean.iter().map(|s| s.sqrt()).collect();
    let total: f64 = roots.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateDesign {
            config: 0,
            value: 0.0,
        });
    }
    let design = Design::normalized(roots)?;
    let objective = crb_from_block_sums(&clean, &design);
    Ok(Solution::closed_form(design, objective, warnings))
}

fn boundary_warnings(setup: &ExperimentSetup, r: &DVector<f64>) -> Result<Vec<Warning>> {
    let p = probabilities(setup, r)?;
    let min = p.min();
    Ok(if min < 1e-9 {
        vec![Warning::NearBoundaryState {
            min_probability: min,
        }]
    } else {
        Vec::new()
    })
}

/// `λ_γ ∝ √(Σ_α′ b_α′γ)` at Bloch vector `r`.
pub fn minimal_oed(setup: &ExperimentSetup, r: &DVector<f64>) -> Result<Solution> {
    let kernel = minimal_kernel(setup, r)?;
    square_root_design(&kernel.block_sums(), boundary_warnings(setup, r)?)
}

/// Binary special case `λ_γ ∝ √(d_γ p_γ(1 − p_γ))`.
pub fn minimal_oed_binary(setup: &ExperimentSetup, r: &DVector<f64>) -> Result<Solution> {
    if let Some(c) = setup.configs().iter().find(|c| c.outcomes.len() != 2) {
        return Err(Error::NotBinary {
            config: c.label.clone(),
            outcomes: c.outcomes.len(),
        });
    }
    let kernel = minimal_kernel(setup, r)?;
    let sums: Vec<f64> = kernel
        .p_reduced
        .iter()
        .zip(kernel.geometry.d.iter())
        .map(|(&p, &d)| d * p * (1.0 - p))
        .collect();
    square_root_design(&sums, boundary_warnings(setup, r)?)
}
