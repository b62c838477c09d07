//! Monte-Carlo tomography campaigns over a quadrature grid of qubit states.
//!
//! The grid is a product rule in spherical coordinates: Clenshaw–Curtis in
//! the radius (with the `r²` Jacobian) and in `cos θ`, and the trapezoid rule
//! in the azimuth, which is exact for trigonometric polynomials. Weights are
//! stored un-normalized, so they integrate to the ball volume.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::cholesky::{ccrb, cholesky_vector, fisher_cholesky, optimize_design_cholesky, theta_from_bloch};
use crate::design_analytic::minimal_oed;
use crate::design_numeric::{optimize_design_at_state, round_design, ShotAllocation};
use crate::estimators::{draw_counts, estimate_all, Inverter, Method, Observed};
use crate::fisher::{crb_minimal, fisher_info, kernel_geometry, minimal_kernel_with, Design};
use crate::repr::{bloch_to_density, outer_radius, probabilities, ExperimentSetup, POSITIVITY_TOLERANCE};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Boundary nodes are pulled inside by this relative amount before a
/// per-state design is computed there.
pub const BOUNDARY_SHRINK: f64 = 1e-6;

/// Clenshaw–Curtis nodes (ascending) and weights on `[−1, 1]`.
pub fn clenshaw_curtis(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 {
        return Err(Error::InvalidDimension(n));
    }
    let m = n - 1;
    let mf = m as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for j in (0..n).rev() {
        let theta = j as f64 * PI / mf;
        let mut s = 0.0;
        for k in 1..=m / 2 {
            let b = if 2 * k == m { 1.0 } else { 2.0 };
            s += b / (4.0 * (k * k) as f64 - 1.0) * (2.0 * k as f64 * theta).cos();
        }
        let c = if j == 0 || j == m { 1.0 } else { 2.0 };
        nodes.push(theta.cos());
        weights.push(c / mf * (1.0 - s));
    }
    // cos(jπ/m) is not exactly antisymmetric in floating point.
    for j in 0..n / 2 {
        let x = 0.5 * (nodes[n - 1 - j] - nodes[j]);
        nodes[j] = -x;
        nodes[n - 1 - j] = x;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

#[derive(Debug, Clone, Serialize)]
pub struct GridNode {
    pub r: Vec<f64>,
    pub radius: f64,
    pub polar: f64,
    pub azimuth: f64,
    /// Quadrature weight; the weights sum to the ball volume.
    pub weight: f64,
}

impl GridNode {
    pub fn bloch(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.r)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SphereGrid {
    pub n_radial: usize,
    pub n_polar: usize,
    pub n_azimuth: usize,
    pub radius: f64,
    pub nodes: Vec<GridNode>,
}

impl SphereGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn volume(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    /// Weights scaled to sum to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let v = self.volume();
        self.nodes.iter().map(|n| n.weight / v).collect()
    }

    /// `∫ f dV` by the product rule.
    pub fn integrate<F: Fn(&DVector<f64>) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().map(|n| n.weight * f(&n.bloch())).sum()
    }

    /// Ball average of per-node values.
    pub fn average(&self, values: &[f64]) -> f64 {
        self.nodes
            .iter()
            .zip(values)
            .filter(|(n, _)| n.weight != 0.0)
            .map(|(n, v)| n.weight * v)
            .sum::<f64>()
            / self.volume()
    }
}

/// Product grid over the qubit Bloch ball of radius `1/√2`.
pub fn sphere_grid(n_radial: usize, n_polar: usize, n_azimuth: usize) -> Result<SphereGrid> {
    if n_azimuth < 2 {
        return Err(Error::InvalidDimension(n_azimuth));
    }
    let radius = outer_radius(2);
    let (xr, wr) = clenshaw_curtis(n_radial)?;
    let (xp, wp) = clenshaw_curtis(n_polar)?;
    let wa = 2.0 * PI / n_azimuth as f64;
    let mut nodes = Vec::with_capacity(n_radial * n_polar * n_azimuth);
    for (x, w) in xr.iter().zip(&wr) {
        let rho = 0.5 * radius * (1.0 + x);
        let w_r = 0.5 * radius * w * rho * rho;
        for (cos_t, w_p) in xp.iter().zip(&wp) {
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            for k in 0..n_azimuth {
                let phi = k as f64 * wa;
                nodes.push(GridNode {
                    r: vec![rho * sin_t * phi.cos(), rho * sin_t * phi.sin(), rho * cos_t],
                    radius: rho,
                    polar: cos_t.clamp(-1.0, 1.0).acos(),
                    azimuth: phi,
                    weight: w_r * w_p * wa,
                });
            }
        }
    }
    Ok(SphereGrid {
        n_radial,
        n_polar,
        n_azimuth,
        radius,
        nodes,
    })
}

/// `B(r)` for a design. Minimal setups use the kernel form, which stays
/// finite where some probability vanishes; otherwise a singular Fisher
/// matrix gives infinity.
pub fn crb_at(setup: &ExperimentSetup, design: &Design, r: &DVector<f64>) -> Result<f64> {
    if setup.is_minimal() {
        let geo = kernel_geometry(setup)?;
        return crb_minimal(&minimal_kernel_with(setup, &geo, r)?, design);
    }
    match fisher_info(setup, design, r) {
        Ok(f) => Ok(f.crb),
        Err(e) if e.is_numerical() => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignSettings {
    pub n_tot: u64,
    pub runs: u64,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Feed exact probabilities to the estimators instead of sampled counts.
    pub exact_statistics: bool,
    /// Also record the ML error in the Cholesky vector and the constrained
    /// bound (qubits).
    pub theta_space: bool,
}

impl Default for CampaignSettings {
    fn default() -> Self {
        CampaignSettings {
            n_tot: 1000,
            runs: 2000,
            methods: Method::ALL.to_vec(),
            seed: 0,
            exact_statistics: false,
            theta_space: false,
        }
    }
}

/// Results for one grid node.
#[derive(Debug, Clone, Serialize)]
pub struct StateResult {
    pub index: usize,
    /// `B(r)/N_tot`.
    pub crb: f64,
    /// Mean `|r̂ − r|²` per method, in the order of the settings.
    pub mse: Vec<f64>,
    /// Mean `|θ̂ − θ|²` of the ML estimate.
    pub theta_mse: Option<f64>,
    /// Constrained bound over `N_tot`.
    pub ccrb: Option<f64>,
    /// Runs in which ML had to floor a fitted probability.
    pub regularized: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Ball average of the MSE.
    pub mse: f64,
    pub rms: f64,
    /// `mse / crb`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignSummary {
    pub states: usize,
    pub n_tot: u64,
    pub runs: u64,
    pub seed: u64,
    pub shots: Vec<u64>,
    /// Ball average of `B/N_tot`.
    pub crb: f64,
    pub methods: Vec<MethodSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ccrb: Option<f64>,
}

impl CampaignSummary {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignResult {
    pub settings: CampaignSettings,
    pub shots: ShotAllocation,
    pub grid: SphereGrid,
    pub states: Vec<StateResult>,
}

/// Formats with 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

impl CampaignResult {
    /// Ball averages. MSE columns are absent when no runs were made.
    pub fn summary(&self) -> CampaignSummary {
        let crb: Vec<f64> = self.states.iter().map(|s| s.crb).collect();
        let avg_crb = self.grid.average(&crb);
        let methods = if self.settings.runs == 0 {
            Vec::new()
        } else {
            self.settings
                .methods
                .iter()
                .enumerate()
                .map(|(k, &method)| {
                    let v: Vec<f64> = self.states.iter().map(|s| s.mse[k]).collect();
                    let mse = self.grid.average(&v);
                    MethodSummary {
                        method,
                        mse,
                        rms: mse.sqrt(),
                        ratio: mse / avg_crb,
                    }
                })
                .collect()
        };
        let column = |f: fn(&StateResult) -> Option<f64>| -> Option<f64> {
            let v: Option<Vec<f64>> = self.states.iter().map(f).collect();
            v.map(|v| self.grid.average(&v))
        };
        CampaignSummary {
            states: self.states.len(),
            n_tot: self.settings.n_tot,
            runs: self.settings.runs,
            seed: self.settings.seed,
            shots: self.shots.shots.clone(),
            crb: avg_crb,
            methods,
            theta_mse: column(|s| s.theta_mse),
            ccrb: column(|s| s.ccrb),
        }
    }

    /// One row per grid node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.grid.nodes.first().map_or(0, |n| n.r.len());
        let mut header: Vec<String> = ["index", "radius", "polar", "azimuth", "weight"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=d).map(|j| format!("r{j}")));
        header.push("crb".into());
        if self.settings.runs > 0 {
            header.extend(self.settings.methods.iter().map(|m| format!("mse_{m}")));
        }
        let theta = self.states.iter().all(|s| s.theta_mse.is_some()) && !self.states.is_empty();
        if theta {
            header.extend(["theta_mse_ml".to_string(), "ccrb".to_string()]);
        }
        w.write_record(&header).map_err(csv_error)?;
        for (node, s) in self.grid.nodes.iter().zip(&self.states) {
            let mut row = vec![
                s.index.to_string(),
                num(node.radius),
                num(node.polar),
                num(node.azimuth),
                num(node.weight),
            ];
            row.extend(node.r.iter().map(|&x| num(x)));
            row.push(num(s.crb));
            if self.settings.runs > 0 {
                row.extend(s.mse.iter().map(|&x| num(x)));
            }
            if theta {
                row.push(num(s.theta_mse.unwrap_or(f64::NAN)));
                row.push(num(s.ccrb.unwrap_or(f64::NAN)));
            }
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Simulates `runs` tomography experiments at every grid node.
///
/// Each (node, run) pair draws from its own stream derived from the master
/// seed, and nodes are reduced in grid order, so the result does not depend
/// on the number of threads.
pub fn run_trials(
    setup: &ExperimentSetup,
    design: &Design,
    grid: &SphereGrid,
    settings: &CampaignSettings,
) -> Result<CampaignResult> {
    design.check_len(setup.num_configs())?;
    if setup.dimension() != 2 {
        return Err(Error::Unsupported("campaigns run on qubit grids".into()));
    }
    let shots = round_design(design, settings.n_tot);
    let inverter = Inverter::for_shots(setup, &shots.shots)?;
    let states = grid
        .nodes
        .par_iter()
        .enumerate()
        .map(|(index, node)| state_trials(setup, design, &inverter, &shots.shots, index, node, settings))
        .collect::<Result<Vec<_>>>()?;
    Ok(CampaignResult {
        settings: settings.clone(),
        shots,
        grid: grid.clone(),
        states,
    })
}

fn state_trials(
    setup: &ExperimentSetup,
    design: &Design,
    inverter: &Inverter,
    shots: &[u64],
    index: usize,
    node: &GridNode,
    settings: &CampaignSettings,
) -> Result<StateResult> {
    let r = node.bloch();
    let n_tot = settings.n_tot as f64;
    let crb = crb_at(setup, design, &r)? / n_tot;
    let p = probabilities(setup, &r)?;
    if p.min() < -POSITIVITY_TOLERANCE {
        return Err(Error::Unphysical(format!("grid node {index}")));
    }
    let ml_slot = settings.methods.iter().position(|&m| m == Method::MaxLikelihood);
    let (theta, ccrb_value) = if settings.theta_space {
        let theta = theta_from_bloch(&r, setup.basis())?;
        let bound = match fisher_cholesky(setup, design, &theta) {
            Ok(f) => ccrb(&f.matrix, &theta)?.projection,
            Err(e) if e.is_numerical() => f64::INFINITY,
            Err(e) => return Err(e),
        };
        (Some(theta), Some(bound / n_tot))
    } else {
        (None, None)
    };
    let mut sums = vec![0.0; settings.methods.len()];
    let mut theta_sum = 0.0;
    let mut regularized = 0;
    let total = shots.iter().sum::<u64>().max(1) as f64;
    let config_weights: Vec<f64> = shots.iter().map(|&n| n as f64 / total).collect();
    let mut counts = vec![0u64; p.len()];
    for run in 0..settings.runs {
        let observed = if settings.exact_statistics {
            Observed::exact(setup, shots, &r)?
        } else {
            let seed = derive_seed(settings.seed, &[index as u64, run]);
            draw_counts(setup.blocks(), &p, shots, seed, &mut counts)?;
            let mut f = DVector::zeros(p.len());
            for (b, &n) in setup.blocks().iter().zip(shots) {
                if n > 0 {
                    for i in b.clone() {
                        f[i] = counts[i] as f64 / n as f64;
                    }
                }
            }
            Observed {
                frequencies: f,
                shots: shots.to_vec(),
                config_weights: config_weights.clone(),
            }
        };
        let estimates = estimate_all(setup, inverter, &observed, &settings.methods)?;
        for (k, e) in estimates.iter().enumerate() {
            sums[k] += (&e.r - &r).norm_squared();
        }
        if let Some(k) = ml_slot {
            let ml = &estimates[k];
            regularized += u64::from(ml.regularized);
            if let Some(theta) = &theta {
                let rho = bloch_to_density(&ml.r, setup.basis())?;
                theta_sum += (cholesky_vector(&rho)?.theta - theta).norm_squared();
            }
        }
    }
    let runs = settings.runs.max(1) as f64;
    Ok(StateResult {
        index,
        crb,
        mse: if settings.runs == 0 {
            Vec::new()
        } else {
            sums.iter().map(|s| s / runs).collect()
        },
        theta_mse: theta.as_ref().filter(|_| settings.runs > 0 && ml_slot.is_some()).map(|_| theta_sum / runs),
        ccrb: ccrb_value,
        regularized,
    })
}

/// `100 (1 − rms_optimized/rms_reference)` for one estimator.
pub fn rms_improvement(reference: &CampaignSummary, optimized: &CampaignSummary, method: Method) -> Option<f64> {
    let a = reference.method(method)?.rms;
    let b = optimized.method(method)?.rms;
    Some(100.0 * (1.0 - b / a))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Bloch,
    Cholesky,
}

#[derive(Debug, Clone, Serialize)]
pub struct BruteForceDesign {
    pub design: Design,
    /// Nodes whose per-state design failed; their weight is dropped.
    pub excluded: Vec<usize>,
}

/// Quadrature average of the per-state OED over the qubit ball.
pub fn brute_force_average_oed(
    setup: &ExperimentSetup,
    grid: &SphereGrid,
    representation: Representation,
) -> Result<BruteForceDesign> {
    if setup.dimension() != 2 {
        return Err(Error::Unsupported("brute-force averaging needs a qubit".into()));
    }
    let m = setup.num_configs();
    let limit = grid.radius * (1.0 - BOUNDARY_SHRINK);
    let per_node: Vec<Option<Vec<f64>>> = grid
        .nodes
        .par_iter()
        .map(|node| {
            if node.weight == 0.0 {
                return Ok(Some(vec![0.0; m]));
            }
            let mut r = node.bloch();
            if r.norm() > limit {
                r *= 1.0 - BOUNDARY_SHRINK;
            }
            let sol = match representation {
                Representation::Bloch if setup.is_minimal() => minimal_oed(setup, &r),
                Representation::Bloch => optimize_design_at_state(setup, &r, &Default::default()),
                Representation::Cholesky => {
                    theta_from_bloch(&r, setup.basis()).and_then(|t| optimize_design_cholesky(setup, &t, &Default::default()))
                }
            };
            match sol {
                Ok(s) => Ok(Some(s.weights().to_vec())),
                Err(e) if e.is_numerical() => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0; m];
    let mut excluded = Vec::new();
    for (i, (node, w)) in grid.nodes.iter().zip(&per_node).enumerate() {
        match w {
            Some(w) => {
                for (a, x) in acc.iter_mut().zip(w) {
                    *a += node.weight * x;
                }
            }
            None => excluded.push(i),
        }
    }
    Ok(BruteForceDesign {
        design: Design::normalized(acc)?,
        excluded,
    })
}

/// L1 distance between two designs.
pub fn discrepancy(a: &Design, b: &Design) -> Result<f64> {
    b.check_len(a.len())?;
    Ok(a.weights().iter().zip(b.weights()).map(|(x, y)| (x - y).abs()).sum())
}
