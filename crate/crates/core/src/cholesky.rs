//! The Cholesky parameterization `ρ = T†T`.
//!
//! `T` is upper triangular with a real diagonal, so `L = T†` is lower
//! triangular. Its entries, read column by column, give the real vector `θ`:
//! first the real parts of the lower triangle including the diagonal, then
//! the imaginary parts of the strictly lower triangle. `θ` has `N²` entries
//! and `|θ|² = tr ρ = 1`.
//!
//! Probabilities become quadratic, `p_α = θᵀQ_αθ`, so the Fisher
//! information is `F = Σ λ_γ z_α z_αᵀ / p_α` with `z_α = 2Q_αθ`. Since
//! `Σ_α Q_α = I` within a configuration, `Fθ = 4θ` for any state and design.
//! The bound under the constraint `|θ| = 1` is `tr{F⁻¹} − 1/4`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::design_numeric::{optimize_design, LinearFisherModel, OptimizerSettings};
use crate::fisher::{state_weights, weighted_gram, Design, FisherBundle};
use crate::linalg::{hermitian_defect, SymInverse};
use crate::repr::{bloch_to_density, ExperimentSetup, HermitianBasis, INPUT_TOLERANCE, POSITIVITY_TOLERANCE};
use crate::simplex::Solution;
use crate::{CMatrix, Error, Result};

/// Pivots this small are treated as exact zeros. The column below such a
/// pivot is set to zero, which reproduces `ρ` to within `√pivot`.
const ZERO_PIVOT: f64 = 1e-22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Re,
    Im,
}

/// Where one entry of `θ` lives in `L = T†`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ThetaSlot {
    pub part: Part,
    pub row: usize,
    pub col: usize,
}

impl ThetaSlot {
    /// Position in the full vector `t` (length `2N²`).
    pub fn t_index(&self, n: usize) -> usize {
        let offset = match self.part {
            Part::Re => 0,
            Part::Im => n * n,
        };
        offset + self.col * n + self.row
    }
}

/// The `θ` layout for dimension `n`.
pub fn theta_layout(n: usize) -> Vec<ThetaSlot> {
    let mut slots = Vec::with_capacity(n * n);
    for (part, strict) in [(Part::Re, false), (Part::Im, true)] {
        for col in 0..n {
            for row in (col + usize::from(strict))..n {
                slots.push(ThetaSlot { part, row, col });
            }
        }
    }
    slots
}

#[derive(Debug, Clone)]
pub struct CholeskyState {
    /// Upper-triangular factor with `ρ = T†T`.
    pub upper: CMatrix,
    /// Real then imaginary parts of `vec(T†)`, length `2N²`.
    pub t: DVector<f64>,
    pub theta: DVector<f64>,
}

impl CholeskyState {
    pub fn dimension(&self) -> usize {
        self.upper.nrows()
    }

    pub fn density(&self) -> CMatrix {
        self.upper.adjoint() * &self.upper
    }
}

/// Projects tiny negative eigenvalues to zero, restoring unit trace.
fn clip_negative(rho: &CMatrix) -> CMatrix {
    let eig = SymmetricEigen::new(rho.clone());
    let vals = eig.eigenvalues.map(|x| x.max(0.0));
    let total: f64 = vals.sum();
    let diag = CMatrix::from_diagonal(&vals.map(|x| Complex64::new(x / total, 0.0)));
    let v = &eig.eigenvectors;
    let out = v * diag * v.adjoint();
    (&out + out.adjoint()) * Complex64::new(0.5, 0.0)
}

/// `L` with `ρ = LL†`, lower triangular with a nonnegative real diagonal.
fn lower_factor(rho: &CMatrix) -> CMatrix {
    let n = rho.nrows();
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = rho[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d <= ZERO_PIVOT {
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = Complex64::new(pivot, 0.0);
        for i in (j + 1)..n {
            let mut x = rho[(i, j)];
            for k in 0..j {
                x -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = x / pivot;
        }
    }
    l
}

/// Factorizes a density matrix. Eigenvalues down to `−1e-10` are clipped
/// to zero first.
pub fn cholesky_vector(rho: &CMatrix) -> Result<CholeskyState> {
    let n = rho.nrows();
    if n < 2 || rho.ncols() != n {
        return Err(Error::Shape {
            rows: rho.nrows(),
            cols: rho.ncols(),
            expected: n.max(2),
        });
    }
    let defect = hermitian_defect(rho);
    if defect > INPUT_TOLERANCE {
        return Err(Error::NotHermitian(defect));
    }
    let tr = rho.trace();
    if (tr - Complex64::new(1.0, 0.0)).norm() > INPUT_TOLERANCE {
        return Err(Error::InvalidTrace(tr.re));
    }
    let sym = (rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    let min = crate::linalg::min_eigenvalue(&sym);
    if min < -POSITIVITY_TOLERANCE {
        return Err(Error::NotPositive(min));
    }
    let sym = if min < 0.0 { clip_negative(&sym) } else { sym };
    let l = lower_factor(&sym);
    let mut t = DVector::zeros(2 * n * n);
    for col in 0..n {
        for row in 0..n {
            t[col * n + row] = l[(row, col)].re;
            t[n * n + col * n + row] = l[(row, col)].im;
        }
    }
    let mut theta = DVector::from_iterator(n * n, theta_layout(n).iter().map(|s| t[s.t_index(n)]));
    // |θ|² = tr ρ = 1 up to rounding; make it exact.
    let norm = theta.norm();
    theta /= norm;
    t /= norm;
    Ok(CholeskyState {
        upper: l.adjoint() / Complex64::new(norm, 0.0),
        t,
        theta,
    })
}

fn lower_from_theta(theta: &DVector<f64>) -> Result<CMatrix> {
    let n = (theta.len() as f64).sqrt().round() as usize;
    if n < 2 || n * n != theta.len() {
        return Err(Error::LengthMismatch {
            got: theta.len(),
            expected: (n * n).max(4),
        });
    }
    let mut l = CMatrix::zeros(n, n);
    for (slot, &x) in theta_layout(n).iter().zip(theta.iter()) {
        match slot.part {
            Part::Re => l[(slot.row, slot.col)].re = x,
            Part::Im => l[(slot.row, slot.col)].im = x,
        }
    }
    Ok(l)
}

/// `ρ = LL†` with `L` rebuilt from `θ`; the result has trace `|θ|²`.
pub fn theta_to_density(theta: &DVector<f64>) -> Result<CMatrix> {
    let l = lower_from_theta(theta)?;
    Ok(&l * l.adjoint())
}

/// `θ` of the state with Bloch vector `r`.
pub fn theta_from_bloch(r: &DVector<f64>, basis: &HermitianBasis) -> Result<DVector<f64>> {
    Ok(cholesky_vector(&bloch_to_density(r, basis)?)?.theta)
}

/// `[[Re H, −Im H], [Im H, Re H]]` for `H = I ⊗ Π`: the real form of
/// `l†(I ⊗ Π)l = tr{L†ΠL}` acting on `(Re vec L, Im vec L)`.
pub fn real_embedding(pi: &CMatrix) -> DMatrix<f64> {
    let n = pi.nrows();
    let nn = n * n;
    let mut p = DMatrix::zeros(2 * nn, 2 * nn);
    for b in 0..n {
        for i in 0..n {
            for j in 0..n {
                let (r, c) = (b * n + i, b * n + j);
                let h = pi[(i, j)];
                p[(r, c)] = h.re;
                p[(r, nn + c)] = -h.im;
                p[(nn + r, c)] = h.im;
                p[(nn + r, nn + c)] = h.re;
            }
        }
    }
    p
}

/// Per-outcome `Q_α`, in the global outcome order of the setup.
#[derive(Debug, Clone)]
pub struct QuadraticForms {
    pub q: Vec<DMatrix<f64>>,
    pub slots: Vec<ThetaSlot>,
}

pub fn quadratic_forms(setup: &ExperimentSetup) -> QuadraticForms {
    let n = setup.dimension();
    let slots = theta_layout(n);
    let keep: Vec<usize> = slots.iter().map(|s| s.t_index(n)).collect();
    let q = setup
        .configs()
        .iter()
        .flat_map(|c| c.outcomes.iter())
        .map(|o| {
            let p = real_embedding(&o.matrix);
            let q = p.select_rows(keep.iter()).select_columns(keep.iter());
            0.5 * (&q + q.transpose())
        })
        .collect();
    QuadraticForms { q, slots }
}

impl QuadraticForms {
    /// `p_α = θᵀQ_αθ`.
    pub fn probabilities(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(theta)?;
        Ok(DVector::from_iterator(self.q.len(), self.q.iter().map(|q| theta.dot(&(q * theta)))))
    }

    /// Rows `z_α = 2Q_αθ`.
    pub fn gradient_rows(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check(theta)?;
        let mut z = DMatrix::zeros(self.q.len(), theta.len());
        for (i, q) in self.q.iter().enumerate() {
            z.row_mut(i).copy_from(&(q * theta * 2.0).transpose());
        }
        Ok(z)
    }

    fn check(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.slots.len() {
            return Err(Error::LengthMismatch {
                got: theta.len(),
                expected: self.slots.len(),
            });
        }
        Ok(())
    }
}

/// Fisher information in `θ`-space, `F = ZᵀΛP⁻¹Z`.
pub fn fisher_cholesky(setup: &ExperimentSetup, design: &Design, theta: &DVector<f64>) -> Result<FisherBundle> {
    design.check_len(setup.num_configs())?;
    let forms = quadratic_forms(setup);
    let p = forms.probabilities(theta)?;
    let w = state_weights(setup, design, &p)?;
    Ok(FisherBundle::from_matrix(weighted_gram(&forms.gradient_rows(theta)?, &w)))
}

/// An orthonormal basis of the complement of `θ` (as columns), from the
/// Householder reflection that maps `θ/|θ|` to a coordinate axis.
pub fn orthogonal_complement(theta: &DVector<f64>) -> DMatrix<f64> {
    let n = theta.len();
    let u = theta / theta.norm();
    let k = u.iamax();
    let sign = if u[k] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = u.clone();
    v[k] += sign;
    let h = DMatrix::identity(n, n) - &v * v.transpose() * (2.0 / v.norm_squared());
    let cols: Vec<usize> = (0..n).filter(|&i| i != k).collect();
    h.select_columns(cols.iter())
}

/// The constrained bound computed both ways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstrainedBound {
    /// `tr{(UᵀFU)⁻¹}` for `U` spanning `θ⊥`; infinite when singular.
    pub projection: f64,
    /// `tr{F⁻¹} − 1/4`; infinite when `F` is singular.
    pub closed_form: f64,
    pub singular: bool,
}

/// Projection route with a given complement basis `u`.
pub fn ccrb_with_basis(f: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    SymInverse::new(&(u.transpose() * f * u)).trace_inverse()
}

pub fn ccrb(f: &DMatrix<f64>, theta: &DVector<f64>) -> Result<ConstrainedBound> {
    if f.nrows() != theta.len() || f.ncols() != theta.len() {
        return Err(Error::Shape {
            rows: f.nrows(),
            cols: f.ncols(),
            expected: theta.len(),
        });
    }
    let projection = ccrb_with_basis(f, &orthogonal_complement(theta));
    let full = SymInverse::new(f).trace_inverse();
    Ok(ConstrainedBound {
        projection,
        closed_form: full - 0.25,
        singular: !projection.is_finite(),
    })
}

/// Design problem with `Z` in place of `A`.
pub fn cholesky_model(setup: &ExperimentSetup, theta: &DVector<f64>) -> Result<LinearFisherModel> {
    let forms = quadratic_forms(setup);
    let p = forms.probabilities(theta)?;
    // Uniform λ only serves the floor check; the model weights are 1/p.
    state_weights(setup, &Design::uniform(setup.num_configs()), &p)?;
    let w = p.map(|x| 1.0 / x);
    let model = LinearFisherModel::new(forms.gradient_rows(theta)?, w, setup.blocks().to_vec())?;
    Ok(model.with_min_probability(p.min()))
}

/// Minimizes the constrained bound; the reported objective is
/// `tr{F⁻¹} − 1/4`.
pub fn optimize_design_cholesky(
    setup: &ExperimentSetup,
    theta: &DVector<f64>,
    settings: &OptimizerSettings,
) -> Result<Solution> {
    let mut sol = optimize_design(&cholesky_model(setup, theta)?, settings)?;
    sol.objective -= 0.25;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design_numeric::cost_gradient;
    use crate::linalg::trace_product;
    use crate::simplex::SimplexObjective;
    use crate::rng::stream;
    use crate::setups::{qubit_mub, random_density, random_minimal_binary_qubit, random_qubit_state, random_setup};
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn layout_has_n_squared_slots() {
        for n in 2..5 {
            let slots = theta_layout(n);
            assert_eq!(slots.len(), n * n);
            assert!(slots.iter().all(|s| s.row >= s.col));
            assert!(slots.iter().filter(|s| s.part == Part::Im).all(|s| s.row > s.col));
        }
    }

    #[test]
    fn maximally_mixed_qubit() {
        let rho = CMatrix::identity(2, 2) * c(0.5);
        let s = cholesky_vector(&rho).unwrap();
        let h = FRAC_1_SQRT_2;
        assert!((s.theta.clone() - DVector::from_vec(vec![h, 0.0, h, 0.0])).amax() < 1e-15);
        assert!((s.upper.clone() - CMatrix::identity(2, 2) * c(h)).camax() < 1e-15);
    }

    #[test]
    fn pure_state_is_a_unit_vector() {
        let mut rho = CMatrix::zeros(2, 2);
        rho[(0, 0)] = c(1.0);
        let s = cholesky_vector(&rho).unwrap();
        assert_eq!(s.theta.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        // |1⟩⟨1| needs the zero-pivot convention.
        let mut rho = CMatrix::zeros(2, 2);
        rho[(1, 1)] = c(1.0);
        let s = cholesky_vector(&rho).unwrap();
        assert!((s.density() - &rho).camax() < 1e-15);
        assert!((s.theta.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rank_deficient_qutrit_round_trips() {
        let mut rng = stream(3, &[]);
        let v = DMatrix::from_fn(3, 2, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let mut rho = &v * v.adjoint();
        rho /= rho.trace();
        let s = cholesky_vector(&rho).unwrap();
        assert!((theta_to_density(&s.theta).unwrap() - &rho).camax() < 1e-10);
        assert!((s.theta.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mut rho = CMatrix::identity(2, 2) * c(0.5);
        rho[(0, 0)] = c(1.1);
        rho[(1, 1)] = c(-0.1);
        assert!(matches!(cholesky_vector(&rho), Err(Error::NotPositive(_))));
        assert!(matches!(cholesky_vector(&CMatrix::identity(2, 2)), Err(Error::InvalidTrace(_))));
        // A tiny negative eigenvalue is clipped.
        let mut rho = CMatrix::zeros(2, 2);
        rho[(0, 0)] = c(1.0 + 1e-11);
        rho[(1, 1)] = c(-1e-11);
        let s = cholesky_vector(&rho).unwrap();
        assert!((s.theta.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_element_gives_identity_form() {
        assert_eq!(real_embedding(&CMatrix::identity(3, 3)), DMatrix::identity(18, 18));
        let half = CMatrix::identity(2, 2) * c(0.5);
        let s = ExperimentSetup::from_elements(2, vec![("coin".into(), vec![half.clone(), half])]).unwrap();
        let forms = quadratic_forms(&s);
        assert!((&forms.q[0] - DMatrix::identity(4, 4) * 0.5).amax() < 1e-15);
    }

    #[test]
    fn mub_at_maximally_mixed_state() {
        // The parameterization singles out the diagonal: at ρ = I/2 the bound
        // is 1/(2λ_x) + 1/(2λ_y) + 1/(4λ_z), so the design is not uniform.
        let s = qubit_mub();
        let theta = theta_from_bloch(&DVector::zeros(3), s.basis()).unwrap();
        let sol = optimize_design_cholesky(&s, &theta, &Default::default()).unwrap();
        let r2 = std::f64::consts::SQRT_2;
        let total = 2.0 * r2 + 1.0;
        for (w, e) in sol.weights().iter().zip([r2 / total, r2 / total, 1.0 / total]) {
            assert!((w - e).abs() < 1e-9);
        }
        assert!((sol.objective - (r2 + 0.5).powi(2)).abs() < 1e-9);
    }

    #[test]
    fn spectral_form_bound() {
        for n in [2usize, 3] {
            let mut rng = stream(n as u64, &[]);
            let mut theta = DVector::from_fn(n * n, |_, _| rng.random::<f64>() - 0.5);
            theta /= theta.norm();
            let proj = DMatrix::identity(n * n, n * n) - &theta * theta.transpose();
            let f = &theta * theta.transpose() * 4.0 + proj * 2.0;
            let b = ccrb(&f, &theta).unwrap();
            let expected = (n * n - 1) as f64 / 2.0;
            assert!((b.projection - expected).abs() < 1e-12);
            assert!((b.closed_form - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_state_fisher_is_singular() {
        let s = qubit_mub();
        // Slightly tilted pure state keeps every probability positive.
        let r = DVector::from_vec(vec![0.3, 0.4, 0.5]);
        let r = r.normalize() * FRAC_1_SQRT_2;
        let theta = theta_from_bloch(&r, s.basis()).unwrap();
        let f = fisher_cholesky(&s, &Design::uniform(3), &theta).unwrap();
        assert!(f.singular);
        assert!(ccrb(&f.matrix, &theta).unwrap().singular);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn round_trip_and_quadratic_statistics(seed in any::<u64>(), n in 2usize..4) {
            let mut rng = stream(seed, &[]);
            let rho = random_density(&mut rng, n);
            let state = cholesky_vector(&rho).unwrap();
            prop_assert!((state.theta.norm() - 1.0).abs() < 1e-10);
            prop_assert!((theta_to_density(&state.theta).unwrap() - &rho).camax() < 1e-10);
            for (s, &x) in theta_layout(n).iter().zip(state.theta.iter()) {
                prop_assert_eq!(state.t[s.t_index(n)], x);
            }
            prop_assert_eq!(state.t.iter().filter(|x| **x != 0.0).count(), state.theta.iter().filter(|x| **x != 0.0).count());
            let setup = random_setup(&mut rng, n, n + 1, n).unwrap();
            let forms = quadratic_forms(&setup);
            let p = forms.probabilities(&state.theta).unwrap();
            let t = &state.upper;
            for (i, o) in setup.configs().iter().flat_map(|c| c.outcomes.iter()).enumerate() {
                let direct = trace_product(&(t * &o.matrix), &t.adjoint()).re;
                prop_assert!((p[i] - direct).abs() < 1e-12);
                prop_assert!((&forms.q[i] - forms.q[i].transpose()).amax() == 0.0);
            }
            for b in setup.blocks() {
                let sum = b.clone().fold(DMatrix::zeros(n * n, n * n), |acc, i| acc + &forms.q[i]);
                prop_assert!((sum - DMatrix::identity(n * n, n * n)).amax() < 1e-10);
            }
        }

        #[test]
        fn theta_is_an_eigenvector_and_bounds_agree(seed in any::<u64>()) {
            let mut rng = stream(seed, &[]);
            let s = random_minimal_binary_qubit(&mut rng);
            let theta = theta_from_bloch(&random_qubit_state(&mut rng, 0.9), s.basis()).unwrap();
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
            let d = Design::normalized(w).unwrap();
            let f = fisher_cholesky(&s, &d, &theta).unwrap();
            prop_assert!((&f.matrix * &theta - &theta * 4.0).norm() < 1e-8);
            // Outer-product form 4Σ(λ/p)QθθᵀQ.
            let forms = quadratic_forms(&s);
            let p = forms.probabilities(&theta).unwrap();
            let mut outer = DMatrix::zeros(4, 4);
            for (g, b) in s.blocks().iter().enumerate() {
                for i in b.clone() {
                    let qt = &forms.q[i] * &theta;
                    outer += &qt * qt.transpose() * (4.0 * d.weights()[g] / p[i]);
                }
            }
            prop_assert!((&outer - &f.matrix).amax() < 1e-10 * f.matrix.amax());
            let b = ccrb(&f.matrix, &theta).unwrap();
            prop_assert!((b.projection - b.closed_form).abs() < 1e-8);
            // A rotated complement gives the same bound.
            let u = orthogonal_complement(&theta);
            let rot = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5).qr().q();
            prop_assert!((ccrb_with_basis(&f.matrix, &(u * rot)) - b.projection).abs() < 1e-8 * b.projection);
        }

        #[test]
        fn cholesky_design_gradient_and_optimality(seed in any::<u64>()) {
            let mut rng = stream(seed, &[]);
            let s = random_minimal_binary_qubit(&mut rng);
            let theta = theta_from_bloch(&random_qubit_state(&mut rng, 0.9), s.basis()).unwrap();
            let model = cholesky_model(&s, &theta).unwrap();
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
            let d = Design::normalized(w).unwrap();
            let g = cost_gradient(&model, &d, 0.0).unwrap();
            let scale = g.amax();
            for k in 0..3 {
                let h = 1e-5;
                let mut up = d.weights().to_vec();
                let mut dn = d.weights().to_vec();
                up[k] += h;
                dn[k] -= h;
                let fd = (model.value(&up) - model.value(&dn)) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() < 1e-5 * scale);
            }
            let sol = optimize_design_cholesky(&s, &theta, &Default::default()).unwrap();
            let uniform = ccrb(&fisher_cholesky(&s, &Design::uniform(3), &theta).unwrap().matrix, &theta).unwrap();
            prop_assert!(sol.objective <= uniform.closed_form * (1.0 + 1e-12));
        }
    }
}
