//! State-independent design by averaging over a ball of states.
//!
//! The state space is approximated by a ball of radius `R_N` in the
//! `d = N² − 1` Bloch coordinates, with `R_min = 1/√(N(N−1))` (inscribed)
//! and `R_max = √((N−1)/N)` (circumscribed); both equal `1/√2` for qubits.
//! Two routes lead to an average design:
//!
//! - average the Fisher information, replacing `1/p_α` by
//!   `g_α = ⟨1/p_α⟩` over the ball, then optimize `tr{⟨F⟩⁻¹}`;
//! - average the minimal-tomography bound directly:
//!   `⟪b⟫ = c̃ ∗ (d − Dc̃) − ⟪x²⟫ diag(DK)`, then `λ_γ ∝ √(Σ_α′ ⟪b⟫_α′γ)`.
//!
//! # Computing `g`
//!
//! With `t = R|a|/c`, expanding `1/(c + a·x)` in powers of `x` and using the
//! even moments of the uniform ball gives
//!
//! ```text
//! g = (1/c) Σ_k t^{2k} m_k,   m_0 = 1,   m_k = m_{k−1} (2k−1)/(d+2k)
//! ```
//!
//! which converges for `t ≤ 1` whenever `d ≥ 2`. For qubits the sum has the
//! closed form `3/(4t³c) {(1−t²) ln((1−t)/(1+t)) + 2t}`, used for `t ≥ 1/2`
//! where it is free of cancellation. For `t < 1e-6` the second-order term
//! suffices. At `t = 1` (an outcome whose probability touches zero on the
//! sphere, e.g. a projector) the average is still finite. [`GMethod::ShellRecursion`]
//! instead integrates `ln p` over spherical shells with the `I_n` recursion;
//! it is exact only for qubits and is kept for comparison.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::design_analytic::square_root_design;
use crate::design_numeric::{optimize_design, LinearFisherModel, OptimizerSettings};
use crate::fisher::{crb_from_block_sums, kernel_geometry, Design, FisherBundle, KernelGeometry};
use crate::linalg::neumaier;
use crate::repr::{inner_radius, outer_radius, ExperimentSetup};
use crate::simplex::Solution;
use crate::{Error, Result};

/// Which radius to use for the averaging ball.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RadiusMode {
    #[default]
    Min,
    Max,
    Value(f64),
}

/// Ball radius in Bloch units. The square is stored so that rational radii
/// squared (such as `1/2` for qubits) stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateSpaceRadius {
    pub dimension: usize,
    pub radius_sq: f64,
}

impl StateSpaceRadius {
    pub fn radius(&self) -> f64 {
        self.radius_sq.sqrt()
    }

    /// Number of Bloch coordinates `N² − 1`.
    pub fn coordinates(&self) -> usize {
        self.dimension * self.dimension - 1
    }
}

/// `R_min`, `R_max` or a checked custom radius.
pub fn state_space_radius(n: usize, mode: RadiusMode) -> Result<StateSpaceRadius> {
    if n < 2 {
        return Err(Error::InvalidDimension(n));
    }
    let min_sq = 1.0 / (n * (n - 1)) as f64;
    let max_sq = (n - 1) as f64 / n as f64;
    let radius_sq = match mode {
        RadiusMode::Min => min_sq,
        RadiusMode::Max => max_sq,
        RadiusMode::Value(v) => {
            let (lo, hi) = (inner_radius(n), outer_radius(n));
            if !(v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12)) {
                return Err(Error::RadiusOutOfRange {
                    value: v,
                    min: lo,
                    max: hi,
                });
            }
            v * v
        }
    };
    Ok(StateSpaceRadius {
        dimension: n,
        radius_sq,
    })
}

/// Moments of the uniform ball in `d = N² − 1` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SphereMoments {
    /// `⟪x²⟫ = R²/(d+2)`.
    pub x2: f64,
    /// `⟪x²y²⟫ = R⁴/((d+2)(d+4))`.
    pub x2y2: f64,
    /// `⟪x⁴⟫ = 3⟪x²y²⟫`.
    pub x4: f64,
}

pub fn sphere_moments(radius: &StateSpaceRadius) -> SphereMoments {
    let d = radius.coordinates() as f64;
    let x2 = radius.radius_sq / (d + 2.0);
    let x2y2 = radius.radius_sq * radius.radius_sq / ((d + 2.0) * (d + 4.0));
    SphereMoments {
        x2,
        x2y2,
        x4: 3.0 * x2y2,
    }
}

/// How to evaluate `g_α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GMethod {
    /// Exact ball average (moment series; closed form for qubits).
    #[default]
    Exact,
    /// Shell integration with the `I_n` recursion.
    ShellRecursion,
}

/// Below this `t = R|a|/c` the second-order expansion is used.
const SMALL_T: f64 = 1e-6;
/// Tolerance on `t > 1` before the average counts as divergent.
const TOUCH_TOLERANCE: f64 = 1e-10;

fn series(t: f64, d: f64) -> f64 {
    let t2 = t * t;
    let mut m = 1.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0.0f64;
    // Terms decay like k^{−(d+1)/2} at t = 1, so the tail after term k is
    // about 2k·term/(d−1); stop once that is negligible.
    while k < 2.0e6 {
        k += 1.0;
        m *= (2.0 * k - 1.0) / (d + 2.0 * k);
        term *= t2;
        let next = term * m;
        sum += next;
        let tail = if t2 < 0.9 {
            next * t2 / (1.0 - t2)
        } else {
            next * 2.0 * k / (d - 1.0)
        };
        if tail < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn qubit_closed_form(t: f64) -> f64 {
    let log_term = if t >= 1.0 {
        0.0
    } else {
        (1.0 - t * t) * ((1.0 - t) / (1.0 + t)).ln()
    };
    3.0 / (4.0 * t * t * t) * (log_term + 2.0 * t)
}

/// `⟨1/(c + a·x)⟩` over the ball; `None` if `c + a·x` reaches below zero.
pub fn mean_inverse(c: f64, norm_a: f64, radius: &StateSpaceRadius, method: GMethod) -> Option<f64> {
    let d = radius.coordinates() as f64;
    let rb = radius.radius() * norm_a;
    if !(c > 0.0) {
        return None;
    }
    let t = rb / c;
    if t > 1.0 + TOUCH_TOLERANCE {
        return None;
    }
    let t = t.min(1.0);
    if t < SMALL_T {
        return Some((1.0 + t * t / (d + 2.0)) / c);
    }
    match method {
        GMethod::Exact if radius.dimension == 2 && t >= 0.5 => Some(qubit_closed_form(t) / c),
        GMethod::Exact => Some(series(t, d) / c),
        GMethod::ShellRecursion => {
            let n = radius.coordinates() - 2;
            let r = radius.radius();
            let diff = log_moment_integral(n, c, norm_a, r) - log_moment_integral(n, c, -norm_a, r);
            Some(d / (2.0 * norm_a * r.powi(d as i32)) * diff)
        }
    }
}

/// `u ln u`, continued by 0 at `u = 0`.
fn xlogx(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        u * u.ln()
    }
}

/// `I_n(a, b) = ∫₀^R xⁿ ln(a + bx) dx` by upward recursion from `I_0`.
pub fn log_moment_integral(n: usize, a: f64, b: f64, r: f64) -> f64 {
    let u = a + b * r;
    // (u ln u − u) with the u → 0 limit.
    let upper = xlogx(u) - u;
    let lower = xlogx(a) - a;
    let mut prev = (upper - lower) / b;
    for k in 1..=n {
        let kf = k as f64;
        let terms = [
            r.powi(k as i32) / b * (upper + a),
            r.powi(k as i32 + 1) * kf / (kf + 1.0),
            -kf * a / b * prev,
        ];
        prev = neumaier(terms) / (kf + 1.0);
    }
    prev
}

/// `g_α = ⟨1/p_α⟩` for every outcome.
pub fn g_coefficients(setup: &ExperimentSetup, radius: &StateSpaceRadius) -> Result<DVector<f64>> {
    g_coefficients_with(setup, radius, GMethod::Exact)
}

pub fn g_coefficients_with(
    setup: &ExperimentSetup,
    radius: &StateSpaceRadius,
    method: GMethod,
) -> Result<DVector<f64>> {
    check_dimension(setup, radius)?;
    let mut g = DVector::zeros(setup.num_outcomes());
    for (k, b) in setup.blocks().iter().enumerate() {
        for i in b.clone() {
            let norm = setup.a().row(i).norm();
            g[i] = mean_inverse(setup.c()[i], norm, radius, method).ok_or_else(|| {
                Error::DivergentAverage {
                    config: setup.configs()[k].label.clone(),
                    outcome: i - b.start,
                }
            })?;
        }
    }
    Ok(g)
}

fn check_dimension(setup: &ExperimentSetup, radius: &StateSpaceRadius) -> Result<()> {
    if setup.dimension() != radius.dimension {
        return Err(Error::InvalidDimension(radius.dimension));
    }
    Ok(())
}

/// Averaged quantities for one setup and radius.
#[derive(Debug, Clone)]
pub struct AveragingContext {
    pub radius: StateSpaceRadius,
    pub g: DVector<f64>,
    pub moments: SphereMoments,
    /// Minimal setups only: `f_α′γ = 1/Σ_β g_βγ⁻¹` (over all outcomes of γ).
    pub f: Option<DVector<f64>>,
    /// Minimal setups only: `⟨b⟩ = g̃⁻¹ ∗ (d − f ∗ D g̃⁻¹)`.
    pub b_fisher: Option<DVector<f64>>,
    /// Minimal setups only: `⟪b⟫`.
    pub b_crb: Option<DVector<f64>>,
}

impl AveragingContext {
    pub fn new(setup: &ExperimentSetup, radius: StateSpaceRadius) -> Result<Self> {
        let g = g_coefficients(setup, &radius)?;
        let moments = sphere_moments(&radius);
        let (f, b_fisher, b_crb) = if setup.is_minimal() {
            let geo = kernel_geometry(setup)?;
            let (f, b) = fisher_average_b(setup, &geo, &g);
            (Some(f), Some(b), Some(crb_average_b(setup.c_reduced(), &geo, moments.x2)))
        } else {
            (None, None, None)
        };
        Ok(AveragingContext {
            radius,
            g,
            moments,
            f,
            b_fisher,
            b_crb,
        })
    }
}

fn fisher_average_b(
    setup: &ExperimentSetup,
    geo: &KernelGeometry,
    g: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let kept = setup.kept();
    let g_inv = DVector::from_iterator(kept.len(), kept.iter().map(|&i| 1.0 / g[i]));
    let mut f = DVector::zeros(kept.len());
    for (full, red) in setup.blocks().iter().zip(setup.reduced_blocks()) {
        let total: f64 = full.clone().map(|i| 1.0 / g[i]).sum();
        for i in red.clone() {
            f[i] = 1.0 / total;
        }
    }
    let dg = &geo.d_block * &g_inv;
    let b = g_inv.component_mul(&(&geo.d - f.component_mul(&dg)));
    (f, b)
}

/// `⟪b⟫ = c̃ ∗ (d − Dc̃) − ⟪x²⟫ diag(DK)`.
pub(crate) fn crb_average_b(c: &DVector<f64>, geo: &KernelGeometry, x2: f64) -> DVector<f64> {
    let dk = &geo.d_block * &geo.k;
    let dc = &geo.d_block * c;
    DVector::from_fn(c.len(), |i, _| c[i] * (geo.d[i] - dc[i]) - x2 * dk[(i, i)])
}

/// `⟨F⟩ = AᵀΛGA`.
pub fn averaged_fisher(setup: &ExperimentSetup, design: &Design, context: &AveragingContext) -> Result<FisherBundle> {
    LinearFisherModel::averaged(setup, &context.g)?.fisher(design)
}

/// Average OED from the averaged Fisher information. Minimal setups use the
/// closed form; others are optimized numerically with `P⁻¹ → G`.
pub fn average_oed_fisher(setup: &ExperimentSetup, radius: &StateSpaceRadius) -> Result<Solution> {
    let ctx = AveragingContext::new(setup, *radius)?;
    match &ctx.b_fisher {
        Some(b) => {
            let geo = kernel_geometry(setup)?;
            square_root_design(&geo.block_sums(b), Vec::new())
        }
        None => average_oed_fisher_numeric(setup, radius, &OptimizerSettings::default()),
    }
}

/// Numerical route for any informationally complete setup.
pub fn average_oed_fisher_numeric(
    setup: &ExperimentSetup,
    radius: &StateSpaceRadius,
    settings: &OptimizerSettings,
) -> Result<Solution> {
    let g = g_coefficients(setup, radius)?;
    optimize_design(&LinearFisherModel::averaged(setup, &g)?, settings)
}

/// `⟪B⟫ = Σ ⟪b⟫/λ` at a given design.
pub fn average_crb(setup: &ExperimentSetup, radius: &StateSpaceRadius, design: &Design) -> Result<f64> {
    check_dimension(setup, radius)?;
    let geo = kernel_geometry(setup)?;
    design.check_len(setup.num_configs())?;
    let b = crb_average_b(setup.c_reduced(), &geo, sphere_moments(radius).x2);
    Ok(crb_from_block_sums(&geo.block_sums(&b), design))
}

/// Average OED from the directly averaged bound (minimal setups only).
pub fn average_oed_crb(setup: &ExperimentSetup, radius: &StateSpaceRadius) -> Result<Solution> {
    check_dimension(setup, radius)?;
    let geo = kernel_geometry(setup)?;
    let b = crb_average_b(setup.c_reduced(), &geo, sphere_moments(radius).x2);
    square_root_design(&geo.block_sums(&b), Vec::new())
}

/// `DK` diagonal, exposed for diagnostics.
pub fn dk_diagonal(geo: &KernelGeometry) -> DVector<f64> {
    let dk: DMatrix<f64> = &geo.d_block * &geo.k;
    dk.diagonal()
}
