//! Ready-made setups and random generators for states and measurements.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::singular_range;
use crate::repr::{density_to_bloch, generate_basis, ExperimentSetup, HermitianBasis};
use crate::{CMatrix, Result};

/// `|ψ⟩⟨ψ|` for a (not necessarily normalized) vector.
pub fn projector(psi: &[Complex64]) -> CMatrix {
    let n = psi.len();
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    CMatrix::from_fn(n, n, |i, j| psi[i] * psi[j].conj() / norm)
}

/// Binary projective measurement onto `|ψ⟩` and its complement.
pub fn projective_pair(psi: &[Complex64]) -> Vec<CMatrix> {
    let p = projector(psi);
    let q = CMatrix::identity(psi.len(), psi.len()) - &p;
    vec![p, q]
}

/// The three mutually unbiased qubit bases (σ_x, σ_y, σ_z eigenbases).
pub fn qubit_mub() -> ExperimentSetup {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z = |re: f64, im: f64| Complex64::new(re, im);
    ExperimentSetup::from_elements(
        2,
        vec![
            ("x".into(), projective_pair(&[z(s, 0.), z(s, 0.)])),
            ("y".into(), projective_pair(&[z(s, 0.), z(0., s)])),
            ("z".into(), projective_pair(&[z(1., 0.), z(0., 0.)])),
        ],
    )
    .expect("MUB setup is valid")
}

/// Uniform point in a ball of radius `radius` in `dim` dimensions.
pub fn uniform_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> DVector<f64> {
    let v = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let u: f64 = rng.random();
    v.normalize() * radius * u.powf(1.0 / dim as f64)
}

fn random_qubit_vector<R: Rng + ?Sized>(rng: &mut R) -> [Complex64; 2] {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let theta = z.acos();
    [
        Complex64::new((theta / 2.0).cos(), 0.0),
        Complex64::from_polar((theta / 2.0).sin(), phi),
    ]
}

/// Binary qubit element `E = e₁|ψ⟩⟨ψ| + e₂|ψ⊥⟩⟨ψ⊥|` with `e_i ~ U[0,1]`
/// and `|ψ⟩` uniform on the Bloch sphere; the second outcome is `I − E`.
pub fn random_binary_qubit_config<R: Rng + ?Sized>(rng: &mut R) -> Vec<CMatrix> {
    let psi = random_qubit_vector(rng);
    let perp = [-psi[1].conj(), psi[0].conj()];
    let e1: f64 = rng.random();
    let e2: f64 = rng.random();
    let e = projector(&psi) * Complex64::new(e1, 0.0) + projector(&perp) * Complex64::new(e2, 0.0);
    let f = CMatrix::identity(2, 2) - &e;
    vec![e, f]
}

/// Smallest singular value of `Ã` accepted by [`random_minimal_binary_qubit`].
pub const MIN_SINGULAR_VALUE: f64 = 0.05;

/// Three random binary qubit configurations whose reduced matrix `Ã` is
/// well conditioned (smallest singular value ≥ [`MIN_SINGULAR_VALUE`]).
pub fn random_minimal_binary_qubit<R: Rng + ?Sized>(rng: &mut R) -> ExperimentSetup {
    random_binary_qubit(rng, 3)
}

/// `m ≥ 3` random binary qubit configurations with a well-conditioned `A`.
pub fn random_binary_qubit<R: Rng + ?Sized>(rng: &mut R, m: usize) -> ExperimentSetup {
    loop {
        let configs = (0..m)
            .map(|g| (format!("c{g}"), random_binary_qubit_config(rng)))
            .collect();
        let setup = ExperimentSetup::from_elements(2, configs).expect("random POVM is valid");
        let (min, _) = singular_range(setup.a_reduced());
        if min >= MIN_SINGULAR_VALUE {
            return setup;
        }
    }
}

fn ginibre<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

fn inverse_sqrt(m: &CMatrix) -> CMatrix {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let scaled = CMatrix::from_fn(n, n, |i, j| {
        eig.eigenvectors[(i, j)] * Complex64::new(eig.eigenvalues[j].powf(-0.5), 0.0)
    });
    &scaled * eig.eigenvectors.adjoint()
}

/// Random `k`-outcome POVM in dimension `n`: `Π_i = S^{-1/2} G_i G_i† S^{-1/2}`.
pub fn random_povm<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<CMatrix> {
    let parts: Vec<CMatrix> = (0..k)
        .map(|_| {
            let g = ginibre(rng, n);
            &g * g.adjoint()
        })
        .collect();
    let total = parts.iter().fold(CMatrix::zeros(n, n), |acc, p| acc + p);
    let s = inverse_sqrt(&total);
    let mut out: Vec<CMatrix> = parts.iter().map(|p| &s * p * &s).collect();
    for m in &mut out {
        let h = (m.clone() + m.adjoint()) * Complex64::new(0.5, 0.0);
        *m = h;
    }
    // Put the rounding residue of the completeness relation on the last element.
    let sum = out.iter().fold(CMatrix::zeros(n, n), |acc, p| acc + p);
    let last = out.len() - 1;
    out[last] += CMatrix::identity(n, n) - sum;
    out
}

/// Random full-rank density matrix (Ginibre ensemble).
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    let g = ginibre(rng, n);
    let rho = &g * g.adjoint();
    let tr = rho.trace();
    rho / tr
}

/// Random Bloch vector of a full-rank state.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R, basis: &HermitianBasis) -> DVector<f64> {
    density_to_bloch(&random_density(rng, basis.dimension()), basis)
        .expect("Ginibre state is valid")
        .r
}

/// Random qubit state uniform in the ball of radius `fraction·R₂`.
pub fn random_qubit_state<R: Rng + ?Sized>(rng: &mut R, fraction: f64) -> DVector<f64> {
    uniform_ball(rng, 3, fraction * std::f64::consts::FRAC_1_SQRT_2)
}

/// Random setup in dimension `n` with `m` configurations of `k` outcomes.
pub fn random_setup<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, k: usize) -> Result<ExperimentSetup> {
    generate_basis(n)?;
    let configs = (0..m)
        .map(|g| (format!("c{g}"), random_povm(rng, n, k)))
        .collect();
    ExperimentSetup::from_elements(n, configs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn generated_setups_validate() {
        let mut rng = stream(1, &[]);
        for _ in 0..10 {
            let s = random_minimal_binary_qubit(&mut rng);
            assert!(s.validate().is_valid());
            assert!(s.is_minimal());
        }
        let s = random_setup(&mut rng, 3, 4, 3).unwrap();
        assert!(s.validate().is_valid());
        assert_eq!(s.num_outcomes(), 12);
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = stream(2, &[]);
        for _ in 0..100 {
            assert!(uniform_ball(&mut rng, 8, 0.3).norm() <= 0.3);
        }
    }
}
