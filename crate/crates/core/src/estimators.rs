//! Simulated measurement data and the three reconstruction methods.
//!
//! - inversion: `r̂ = A⁺(p̄ − c)`, which may be unphysical;
//! - least squares: the inversion estimate pulled back into the state space
//!   (radial rescaling for qubits, eigenvalue clipping otherwise);
//! - maximum likelihood: the symmetrized fixed-point iteration
//!   `ρ̂ → ½(Rρ̂ + ρ̂R)` with `R = Σ_α (n_α/N_tot)/p̂_α Π_α`, started from the
//!   least-squares estimate. A physical inversion estimate is already the
//!   likelihood maximum and is returned as is.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::distr::Distribution;
use rand_distr::Binomial;
use serde::{Deserialize, Serialize};

use crate::fisher::PROBABILITY_FLOOR;
use crate::linalg::min_eigenvalue;
use crate::repr::{bloch_to_density, outer_radius, probabilities, ExperimentSetup, POSITIVITY_TOLERANCE};
use crate::rng::stream;
use crate::{CMatrix, Error, Result};

/// Stop when successive ML iterates are this close in trace distance.
pub const ML_TOLERANCE: f64 = 1e-9;
pub const ML_MAX_ITERATIONS: usize = 5000;
/// Weight of `I/N` in the ML starting point.
const ML_START_MIXING: f64 = 1e-4;

/// Outcome counts in the global outcome order of a setup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRecord {
    pub counts: Vec<u64>,
    /// `N_γ` per configuration.
    pub shots: Vec<u64>,
    /// Seed the counts were drawn with.
    pub seed: u64,
}

impl DataRecord {
    pub fn n_tot(&self) -> u64 {
        self.shots.iter().sum()
    }

    /// `p̄ = n/N_γ`; outcomes of unmeasured configurations get 0.
    pub fn frequencies(&self, setup: &ExperimentSetup) -> DVector<f64> {
        let mut f = DVector::zeros(self.counts.len());
        for (b, &n) in setup.blocks().iter().zip(&self.shots) {
            if n > 0 {
                for i in b.clone() {
                    f[i] = self.counts[i] as f64 / n as f64;
                }
            }
        }
        f
    }

    pub fn observed(&self, setup: &ExperimentSetup) -> Observed {
        let total = self.n_tot().max(1) as f64;
        Observed {
            frequencies: self.frequencies(setup),
            shots: self.shots.clone(),
            config_weights: self.shots.iter().map(|&n| n as f64 / total).collect(),
        }
    }
}

/// What the estimators consume: frequencies plus the share of the budget
/// each configuration received. Exact statistics plug in `p̄ = p`.
#[derive(Debug, Clone)]
pub struct Observed {
    pub frequencies: DVector<f64>,
    pub shots: Vec<u64>,
    /// `N_γ/N_tot`.
    pub config_weights: Vec<f64>,
}

impl Observed {
    /// Noiseless data: the frequencies equal the probabilities at `r`.
    pub fn exact(setup: &ExperimentSetup, shots: &[u64], r: &DVector<f64>) -> Result<Self> {
        let total = shots.iter().sum::<u64>().max(1) as f64;
        Ok(Observed {
            frequencies: probabilities(setup, r)?,
            shots: shots.to_vec(),
            config_weights: shots.iter().map(|&n| n as f64 / total).collect(),
        })
    }
}

/// Multinomial counts per configuration, drawn as a chain of binomials.
/// Each configuration has its own stream keyed by `(seed, γ)`.
pub fn sample_data(setup: &ExperimentSetup, shots: &[u64], r: &DVector<f64>, seed: u64) -> Result<DataRecord> {
    if shots.len() != setup.num_configs() {
        return Err(Error::LengthMismatch {
            got: shots.len(),
            expected: setup.num_configs(),
        });
    }
    let p = probabilities(setup, r)?;
    if let Some(min) = p.iter().copied().reduce(f64::min).filter(|&m| m < -POSITIVITY_TOLERANCE) {
        return Err(Error::Unphysical(format!("negative probability {min:e}")));
    }
    let mut counts = vec![0u64; p.len()];
    draw_counts(setup.blocks(), &p, shots, seed, &mut counts)?;
    Ok(DataRecord {
        counts,
        shots: shots.to_vec(),
        seed,
    })
}

/// Fills `counts` for probabilities `p` (already checked to be physical).
pub(crate) fn draw_counts(
    blocks: &[Range<usize>],
    p: &DVector<f64>,
    shots: &[u64],
    seed: u64,
    counts: &mut [u64],
) -> Result<()> {
    for (g, (b, &n)) in blocks.iter().zip(shots).enumerate() {
        counts[b.clone()].fill(0);
        if n == 0 {
            continue;
        }
        let mut rng = stream(seed, &[g as u64]);
        let mut left = n;
        let mut rest = 1.0f64;
        let last = b.end - 1;
        for i in b.start..last {
            let pi = p[i].max(0.0);
            let q = if rest > 0.0 { (pi / rest).clamp(0.0, 1.0) } else { 0.0 };
            let k = if left == 0 || q == 0.0 {
                0
            } else if q == 1.0 {
                left
            } else {
                Binomial::new(left, q)
                    .map_err(|e| Error::Unphysical(e.to_string()))?
                    .sample(&mut rng)
            };
            counts[i] = k;
            left -= k;
            rest -= pi;
        }
        counts[last] = left;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Inversion,
    LeastSquares,
    MaxLikelihood,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Inversion, Method::LeastSquares, Method::MaxLikelihood];

    /// Short name used in CSV headers and on the command line.
    pub fn short(&self) -> &'static str {
        match self {
            Method::Inversion => "inv",
            Method::LeastSquares => "lsq",
            Method::MaxLikelihood => "ml",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inv" | "inversion" => Ok(Method::Inversion),
            "lsq" | "least-squares" => Ok(Method::LeastSquares),
            "ml" | "max-likelihood" => Ok(Method::MaxLikelihood),
            other => Err(Error::Unsupported(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub r: DVector<f64>,
    pub method: Method,
    pub physical: bool,
    /// ML iterations (0 when the inversion estimate was accepted).
    pub iterations: usize,
    /// Some fitted probability hit the floor while its count was positive.
    pub regularized: bool,
}

fn is_physical(setup: &ExperimentSetup, r: &DVector<f64>) -> Result<bool> {
    if setup.dimension() == 2 && r.len() == 3 {
        // Eigenvalues are 1/2 ± |r|/√2.
        return Ok(0.5 - r.norm() * std::f64::consts::FRAC_1_SQRT_2 >= -POSITIVITY_TOLERANCE);
    }
    Ok(min_eigenvalue(&bloch_to_density(r, setup.basis())?) >= -POSITIVITY_TOLERANCE)
}

/// Linear inversion with a cached pseudo-inverse.
#[derive(Debug, Clone)]
pub struct Inverter {
    pinv: DMatrix<f64>,
    c: DVector<f64>,
    /// Outcomes used (configurations with shots).
    rows: Vec<usize>,
}

impl Inverter {
    /// Uses every configuration.
    pub fn new(setup: &ExperimentSetup) -> Result<Self> {
        Self::build(setup, (0..setup.num_outcomes()).collect())
    }

    /// Uses only configurations that received shots.
    pub fn for_shots(setup: &ExperimentSetup, shots: &[u64]) -> Result<Self> {
        if shots.len() != setup.num_configs() {
            return Err(Error::LengthMismatch {
                got: shots.len(),
                expected: setup.num_configs(),
            });
        }
        let rows = setup
            .blocks()
            .iter()
            .zip(shots)
            .filter(|(_, &n)| n > 0)
            .flat_map(|(b, _)| b.clone())
            .collect();
        Self::build(setup, rows)
    }

    fn build(setup: &ExperimentSetup, rows: Vec<usize>) -> Result<Self> {
        let a = setup.a().select_rows(rows.iter());
        let (rows_a, cols_a) = a.shape();
        let svd = a.svd(true, true);
        let max = svd.singular_values.max();
        let min = if rows_a >= cols_a {
            svd.singular_values.min()
        } else {
            0.0
        };
        if !(min > 1e-10 * max) {
            return Err(Error::RankDeficient(min));
        }
        let pinv = svd.pseudo_inverse(0.0).map_err(|e| Error::Unsupported(e.to_string()))?;
        let c = DVector::from_iterator(rows.len(), rows.iter().map(|&i| setup.c()[i]));
        Ok(Inverter { pinv, c, rows })
    }

    pub fn solve(&self, frequencies: &DVector<f64>) -> DVector<f64> {
        let rhs = DVector::from_iterator(self.rows.len(), self.rows.iter().map(|&i| frequencies[i])) - &self.c;
        &self.pinv * rhs
    }
}

pub fn invert(setup: &ExperimentSetup, inverter: &Inverter, data: &Observed) -> Result<Estimate> {
    let r = inverter.solve(&data.frequencies);
    Ok(Estimate {
        physical: is_physical(setup, &r)?,
        r,
        method: Method::Inversion,
        iterations: 0,
        regularized: false,
    })
}

/// Zeroes negative eigenvalues and restores unit trace.
fn clip_to_states(rho: &CMatrix) -> CMatrix {
    let eig = SymmetricEigen::new(rho.clone());
    let vals = eig.eigenvalues.map(|x| x.max(0.0));
    let total = vals.sum();
    let d = CMatrix::from_diagonal(&vals.map(|x| Complex64::new(x / total, 0.0)));
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// Pulls an estimate into the state space. Qubits are rescaled radially
/// onto the Bloch sphere; larger systems use eigenvalue clipping.
pub fn least_squares(setup: &ExperimentSetup, estimate: &Estimate) -> Result<Estimate> {
    let n = setup.dimension();
    let mut out = Estimate {
        method: Method::LeastSquares,
        physical: true,
        iterations: 0,
        regularized: false,
        r: estimate.r.clone(),
    };
    if n == 2 {
        let radius = outer_radius(2);
        let norm = estimate.r.norm();
        if norm > radius {
            out.r *= radius / norm;
        }
    } else if !is_physical(setup, &estimate.r)? {
        let rho = clip_to_states(&bloch_to_density(&estimate.r, setup.basis())?);
        out.r = setup.basis().coordinates(&rho);
    }
    Ok(out)
}

/// `Σ n_α ln p_α` up to the combinatorial constant, with `p` floored.
pub fn log_likelihood(setup: &ExperimentSetup, data: &DataRecord, r: &DVector<f64>) -> Result<f64> {
    let p = probabilities(setup, r)?;
    Ok(data
        .counts
        .iter()
        .zip(p.iter())
        .filter(|(&n, _)| n > 0)
        .map(|(&n, &p)| n as f64 * p.max(PROBABILITY_FLOOR).ln())
        .sum())
}

/// `Σ (n_α/N_tot) ln p_α` with `p` floored.
fn observed_log_likelihood(setup: &ExperimentSetup, share: &DVector<f64>, r: &DVector<f64>) -> Result<f64> {
    let p = probabilities(setup, r)?;
    Ok(share
        .iter()
        .zip(p.iter())
        .filter(|(&w, _)| w > 0.0)
        .map(|(&w, &p)| w * p.max(PROBABILITY_FLOOR).ln())
        .sum())
}

/// Maximum likelihood by the symmetrized fixed-point iteration.
///
/// `inversion` must be the inversion estimate for `data`. When the
/// symmetrized update would leave the state space (it is not guaranteed
/// positive) the step falls back to `RρR/tr{RρR}`, which always is.
pub fn max_likelihood(setup: &ExperimentSetup, data: &Observed, inversion: &Estimate) -> Result<Estimate> {
    max_likelihood_with(setup, data, inversion, setup.dimension() == 2)
}

fn max_likelihood_with(setup: &ExperimentSetup, data: &Observed, inversion: &Estimate, qubit_path: bool) -> Result<Estimate> {
    if inversion.physical {
        return Ok(Estimate {
            method: Method::MaxLikelihood,
            ..inversion.clone()
        });
    }
    let start = least_squares(setup, inversion)?;
    // n_α/N_tot per outcome.
    let mut share = DVector::zeros(setup.num_outcomes());
    for (g, b) in setup.blocks().iter().enumerate() {
        for i in b.clone() {
            share[i] = data.config_weights[g] * data.frequencies[i];
        }
    }
    // A rank-deficient start can sit where some observed outcome has zero
    // probability, which the iteration cannot leave; mix in a little of
    // the maximally mixed state.
    let from = &start.r * (1.0 - ML_START_MIXING);
    let (mut r, iterations, regularized) = if qubit_path {
        hradil_qubit(setup, &share, &from)
    } else {
        hradil_dense(setup, &share, &from)?
    };
    // The iteration approaches boundary maxima slowly; never return less
    // likely a state than the one it started from.
    if observed_log_likelihood(setup, &share, &start.r)? > observed_log_likelihood(setup, &share, &r)? {
        r = start.r;
    }
    Ok(Estimate {
        physical: is_physical(setup, &r)?,
        r,
        method: Method::MaxLikelihood,
        iterations,
        regularized,
    })
}

/// Dense complex iteration for any dimension.
fn hradil_dense(setup: &ExperimentSetup, share: &DVector<f64>, from: &DVector<f64>) -> Result<(DVector<f64>, usize, bool)> {
    let basis = setup.basis();
    let n = setup.dimension();
    let mut rho = bloch_to_density(from, basis)?;
    let elements: Vec<&CMatrix> = setup
        .configs()
        .iter()
        .flat_map(|c| c.outcomes.iter().map(|o| &o.matrix))
        .collect();
    let mut regularized = false;
    let mut iterations = 0;
    let half = Complex64::new(0.5, 0.0);
    let scale = 0.5 * (n as f64).sqrt();
    while iterations < ML_MAX_ITERATIONS {
        iterations += 1;
        let mut r_op = CMatrix::zeros(n, n);
        for (i, pi) in elements.iter().enumerate() {
            if share[i] == 0.0 {
                continue;
            }
            let mut p = crate::linalg::trace_product(pi, &rho).re;
            if p < PROBABILITY_FLOOR {
                p = PROBABILITY_FLOOR;
                regularized = true;
            }
            r_op += *pi * Complex64::new(share[i] / p, 0.0);
        }
        let mut next = (&r_op * &rho + &rho * &r_op) * half;
        next = (&next + next.adjoint()) * half;
        // tr{Rρ} = Σ n/N_tot = 1 up to the floor; normalize anyway.
        let tr = next.trace().re;
        next /= Complex64::new(tr, 0.0);
        if min_eigenvalue(&next) < 0.0 {
            let sandwich = &r_op * &rho * &r_op;
            let sandwich = (&sandwich + sandwich.adjoint()) * half;
            next = &sandwich / Complex64::new(sandwich.trace().re, 0.0);
        }
        // ½‖Δ‖₁ ≤ ½√N‖Δ‖_F.
        let step = scale * (&next - &rho).norm();
        rho = next;
        if step < ML_TOLERANCE {
            break;
        }
    }
    Ok((basis.coordinates(&rho), iterations, regularized))
}

/// The same iteration for qubits in Pauli coordinates: `ρ = ½(I + s·P)`,
/// `R = αI + β·P`. Then
///
/// ```text
/// ½{R, ρ} ∝ ½(α + β·s) I + ½(αs + β)·P
/// RρR     ∝ ½(α² + |β|² + 2αβ·s) I + ½(2αβ + (α² − |β|²)s + 2(β·s)β)·P
/// ```
///
/// and the trace distance between two iterates is `½|s − s′|`.
fn hradil_qubit(setup: &ExperimentSetup, share: &DVector<f64>, from: &DVector<f64>) -> (DVector<f64>, usize, bool) {
    use nalgebra::Vector3;
    let root2 = std::f64::consts::SQRT_2;
    let a = setup.a();
    let c = setup.c();
    let outcomes: Vec<(f64, f64, Vector3<f64>)> = (0..share.len())
        .filter(|&i| share[i] > 0.0)
        .map(|i| (share[i], c[i], Vector3::new(a[(i, 0)], a[(i, 1)], a[(i, 2)])))
        .collect();
    let mut s = Vector3::new(from[0], from[1], from[2]) * root2;
    let mut regularized = false;
    let mut iterations = 0;
    while iterations < ML_MAX_ITERATIONS {
        iterations += 1;
        // Π = cI + a·σ = cI + (a/√2)·P, and r = s/√2.
        let mut alpha = 0.0;
        let mut beta = Vector3::zeros();
        for (w, ci, ai) in &outcomes {
            let mut p = ci + ai.dot(&s) / root2;
            if p < PROBABILITY_FLOOR {
                p = PROBABILITY_FLOOR;
                regularized = true;
            }
            alpha += w / p * ci;
            beta += ai * (w / p / root2);
        }
        let mut next = (s * alpha + beta) / (alpha + beta.dot(&s));
        if next.norm_squared() > 1.0 {
            let bs = beta.dot(&s);
            let b2 = beta.norm_squared();
            next = (beta * (2.0 * alpha) + s * (alpha * alpha - b2) + beta * (2.0 * bs))
                / (alpha * alpha + b2 + 2.0 * alpha * bs);
        }
        let step = 0.5 * (next - s).norm();
        s = next;
        if step < ML_TOLERANCE {
            break;
        }
    }
    (DVector::from_column_slice((s / root2).as_slice()), iterations, regularized)
}

/// All requested estimates for one data set, in the order of `methods`.
pub fn estimate_all(
    setup: &ExperimentSetup,
    inverter: &Inverter,
    data: &Observed,
    methods: &[Method],
) -> Result<Vec<Estimate>> {
    let inv = invert(setup, inverter, data)?;
    methods
        .iter()
        .map(|m| match m {
            Method::Inversion => Ok(inv.clone()),
            Method::LeastSquares => least_squares(setup, &inv),
            Method::MaxLikelihood => max_likelihood(setup, data, &inv),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::{fisher_info, Design};
    use crate::rng::stream;
    use crate::setups::{qubit_mub, random_binary_qubit, random_qubit_state, random_setup, random_state};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn zero_shots_and_certain_outcomes() {
        let s = qubit_mub();
        let d = sample_data(&s, &[0, 0, 0], &DVector::zeros(3), 1).unwrap();
        assert!(d.counts.iter().all(|&n| n == 0));
        // +z eigenstate: the z configuration always gives its first outcome.
        let r = DVector::from_vec(vec![0.0, 0.0, FRAC_1_SQRT_2]);
        let d = sample_data(&s, &[10, 10, 10], &r, 1).unwrap();
        assert_eq!(&d.counts[4..], &[10, 0]);
    }

    #[test]
    fn unphysical_state_is_rejected() {
        let r = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        assert!(matches!(sample_data(&qubit_mub(), &[5, 5, 5], &r, 0), Err(Error::Unphysical(_))));
    }

    #[test]
    fn mub_frequencies_follow_binomial_statistics() {
        let s = qubit_mub();
        let n = 100_000u64;
        let d = sample_data(&s, &[n, n, n], &DVector::zeros(3), 42).unwrap();
        let sigma = (0.25 / n as f64).sqrt();
        for f in d.frequencies(&s).iter() {
            assert!((f - 0.5).abs() < 5.0 * sigma);
        }
        for (b, &shots) in s.blocks().iter().zip(&d.shots) {
            assert_eq!(b.clone().map(|i| d.counts[i]).sum::<u64>(), shots);
        }
        assert_eq!(d, sample_data(&s, &[n, n, n], &DVector::zeros(3), 42).unwrap());
    }

    #[test]
    fn exact_frequencies_invert_exactly() {
        let mut rng = stream(8, &[]);
        for setup in [qubit_mub(), random_setup(&mut rng, 3, 4, 3).unwrap()] {
            let r = random_state(&mut rng, setup.basis()) * 0.5;
            let shots = vec![100; setup.num_configs()];
            let obs = Observed::exact(&setup, &shots, &r).unwrap();
            let inv = Inverter::for_shots(&setup, &shots).unwrap();
            for e in estimate_all(&setup, &inv, &obs, &Method::ALL).unwrap() {
                assert!((&e.r - &r).norm() < 1e-10, "{:?}", e.method);
                assert_eq!(e.iterations, 0);
            }
        }
    }

    #[test]
    fn extreme_counts_invert_outside_the_sphere() {
        // Every configuration saw only its first outcome: p̄ = (1, 0) thrice,
        // so each Bloch component is 1/√2 and |r̂| = √(3/2).
        let s = qubit_mub();
        let data = DataRecord {
            counts: vec![7, 0, 7, 0, 7, 0],
            shots: vec![7, 7, 7],
            seed: 0,
        };
        let obs = data.observed(&s);
        let inv = invert(&s, &Inverter::new(&s).unwrap(), &obs).unwrap();
        assert!((inv.r.norm() - 1.5f64.sqrt()).abs() < 1e-12);
        assert!(!inv.physical);
        let lsq = least_squares(&s, &inv).unwrap();
        assert!((lsq.r.norm() - FRAC_1_SQRT_2).abs() < 1e-12);
        let ml = max_likelihood(&s, &obs, &inv).unwrap();
        assert!(ml.physical);
        assert!(log_likelihood(&s, &data, &ml.r).unwrap() >= log_likelihood(&s, &data, &lsq.r).unwrap() - 1e-9);
    }

    #[test]
    fn least_squares_examples() {
        let s = qubit_mub();
        let mk = |v: Vec<f64>| Estimate {
            r: DVector::from_vec(v),
            method: Method::Inversion,
            physical: false,
            iterations: 0,
            regularized: false,
        };
        let e = least_squares(&s, &mk(vec![0.5, 0.0, 0.0])).unwrap();
        assert_eq!(e.r.as_slice(), &[0.5, 0.0, 0.0]);
        let e = least_squares(&s, &mk(vec![1.0, 0.0, 0.0])).unwrap();
        assert!((e.r[0] - FRAC_1_SQRT_2).abs() < 1e-15);
        let e = least_squares(&s, &mk(vec![0.0, 0.0, 0.0])).unwrap();
        assert_eq!(e.r.as_slice(), &[0.0; 3]);
    }

    #[test]
    fn overdetermined_consistent_data_matches_minimal_solve() {
        let mut rng = stream(12, &[]);
        let s = random_binary_qubit(&mut rng, 5);
        let r = random_qubit_state(&mut rng, 0.9);
        let full = Inverter::new(&s).unwrap().solve(&probabilities(&s, &r).unwrap());
        // First three configurations alone.
        let sub = Inverter::for_shots(&s, &[1, 1, 1, 0, 0]).unwrap().solve(&probabilities(&s, &r).unwrap());
        assert!((&full - &sub).norm() < 1e-10);
    }

    #[test]
    fn rank_deficient_setup_is_rejected() {
        assert!(matches!(Inverter::for_shots(&qubit_mub(), &[1, 1, 0]), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.short().parse::<Method>().unwrap(), m);
        }
        assert!("map".parse::<Method>().is_err());
    }

    #[test]
    fn inversion_is_unbiased() {
        let mut rng = stream(21, &[]);
        let s = crate::setups::random_minimal_binary_qubit(&mut rng);
        let r = random_qubit_state(&mut rng, 0.6);
        let n_tot = 1000u64;
        let shots = vec![334, 333, 333];
        let inv = Inverter::for_shots(&s, &shots).unwrap();
        let runs = 2000;
        let mut mean = DVector::zeros(3);
        for k in 0..runs {
            let d = sample_data(&s, &shots, &r, crate::rng::derive_seed(5, &[k])).unwrap();
            mean += inv.solve(&d.frequencies(&s));
        }
        mean /= runs as f64;
        let design = Design::normalized(shots.iter().map(|&x| x as f64).collect()).unwrap();
        let b = fisher_info(&s, &design, &r).unwrap().crb;
        let envelope = 3.0 * (b / n_tot as f64 / runs as f64).sqrt() * 3f64.sqrt();
        assert!((&mean - &r).norm() < envelope);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn qubit_ml_matches_dense_iteration(seed in any::<u64>()) {
            let mut rng = stream(seed, &[]);
            let s = random_binary_qubit(&mut rng, 4);
            let r = random_qubit_state(&mut rng, 1.0);
            let shots = vec![15u64; 4];
            let obs = sample_data(&s, &shots, &r, seed).unwrap().observed(&s);
            let inv = invert(&s, &Inverter::new(&s).unwrap(), &obs).unwrap();
            let fast = max_likelihood_with(&s, &obs, &inv, true).unwrap();
            let dense = max_likelihood_with(&s, &obs, &inv, false).unwrap();
            // Both stop on a step-size rule, so on slow boundary approaches
            // they can halt at slightly different iterates.
            prop_assert!((&fast.r - &dense.r).norm() < 1e-5, "{:?} {:?}", fast, dense);
        }

        #[test]
        fn ml_output_is_a_state_and_beats_least_squares(seed in any::<u64>(), n in 2usize..4) {
            let mut rng = stream(seed, &[]);
            let s = random_setup(&mut rng, n, n + 1, n).unwrap();
            // States near the boundary with few shots produce unphysical inversions.
            let r = random_state(&mut rng, s.basis());
            let shots = vec![20u64; s.num_configs()];
            let data = sample_data(&s, &shots, &r, seed).unwrap();
            let obs = data.observed(&s);
            let inv = invert(&s, &Inverter::new(&s).unwrap(), &obs).unwrap();
            let ml = max_likelihood(&s, &obs, &inv).unwrap();
            let rho = bloch_to_density(&ml.r, s.basis()).unwrap();
            prop_assert!((rho.trace().re - 1.0).abs() < 1e-10);
            prop_assert!(crate::linalg::hermitian_defect(&rho) < 1e-12);
            prop_assert!(min_eigenvalue(&rho) >= -1e-10);
            if !inv.physical {
                let lsq = least_squares(&s, &inv).unwrap();
                prop_assert!(lsq.physical || n > 2);
                prop_assert!(log_likelihood(&s, &data, &ml.r).unwrap() >= log_likelihood(&s, &data, &lsq.r).unwrap() - 1e-9);
            }
        }
    }
}
