//! Variance of the bound over the state ball, and the design that
//! minimizes it.
//!
//! For minimal setups `B(r) = Σ_γ Σ_α′ b_α′γ(r)/λ_γ` with
//! `b_i(r) = (c_i + Ã_i·r)(e_i − W_i·r)`, `e = d − Dc̃`, `W = DÃ`. Each `b_i`
//! is quadratic in `r`, so its covariance over the uniform ball needs only
//! the moments `⟪x²⟫`, `⟪x²y²⟫` and `⟪x⁴⟫ = 3⟪x²y²⟫`:
//!
//! ```text
//! v_il = ⟪x²⟫ α_i·α_l
//!      + ⟪x²y²⟫ [S_i S_l + K_il (W_i·W_l) + (Ã_i·W_l)(W_i·Ã_l)]
//!      − ⟪x²⟫² S_i S_l
//! ```
//!
//! with `α_i = e_i Ã_i − c_i W_i` and `S_i = Σ_j X_ij`, `X = Ã ∗ W`.
//! Summing `v` over configuration blocks gives `V`, and
//! `⟪δB²⟫ = λ⁻¹ᵀ V λ⁻¹`.

use nalgebra::{DMatrix, DVector};

use crate::averaging::{sphere_moments, StateSpaceRadius};
use crate::fisher::{kernel_geometry, Design};
use crate::repr::ExperimentSetup;
use crate::simplex::{minimize_on_simplex, Evaluation, OptimizerSettings, SimplexObjective, Solution};
use crate::{Error, Result};

/// `V` together with the per-outcome entries it is built from.
#[derive(Debug, Clone)]
pub struct VarianceMatrix {
    /// `M×M` block sums of `v`.
    pub matrix: DMatrix<f64>,
    /// `ñ_tot × ñ_tot` covariances of the `b` entries.
    pub v: DMatrix<f64>,
    /// `W = DÃ`.
    pub w: DMatrix<f64>,
    /// `X = Ã ∗ W` (elementwise).
    pub x: DMatrix<f64>,
}

impl VarianceMatrix {
    /// Wraps a given `M×M` matrix (for experiments with synthetic `V`).
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        VarianceMatrix {
            matrix,
            v: DMatrix::zeros(0, 0),
            w: DMatrix::zeros(0, 0),
            x: DMatrix::zeros(0, 0),
        }
    }
}

pub fn variance_matrix(setup: &ExperimentSetup, radius: &StateSpaceRadius) -> Result<VarianceMatrix> {
    if setup.dimension() != radius.dimension {
        return Err(Error::InvalidDimension(radius.dimension));
    }
    let geo = kernel_geometry(setup)?;
    let mom = sphere_moments(radius);
    let at = setup.a_reduced();
    let c = setup.c_reduced();
    let w = &geo.d_block * at;
    let x = at.component_mul(&w);
    let s: DVector<f64> = DVector::from_iterator(x.nrows(), x.row_iter().map(|r| r.sum()));
    let e = &geo.d - &geo.d_block * c;
    let n = at.nrows();
    let mut alpha = at.clone();
    for i in 0..n {
        let row = at.row(i) * e[i] - w.row(i) * c[i];
        alpha.row_mut(i).copy_from(&row);
    }
    let aa = &alpha * alpha.transpose();
    let ww = &w * w.transpose();
    let aw = at * w.transpose();
    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        for l in 0..n {
            v[(i, l)] = mom.x2 * aa[(i, l)]
                + mom.x2y2 * (s[i] * s[l] + geo.k[(i, l)] * ww[(i, l)] + aw[(i, l)] * aw[(l, i)])
                - mom.x2 * mom.x2 * s[i] * s[l];
        }
    }
    let v = 0.5 * (&v + v.transpose());
    let m = geo.blocks.len();
    let mut matrix = DMatrix::zeros(m, m);
    for (g, bg) in geo.blocks.iter().enumerate() {
        for (h, bh) in geo.blocks.iter().enumerate() {
            matrix[(g, h)] = bg.clone().flat_map(|i| bh.clone().map(move |l| (i, l))).map(|ij| v[ij]).sum();
        }
    }
    Ok(VarianceMatrix { matrix, v, w, x })
}

fn inverse_weights(v: &DMatrix<f64>, lambda: &[f64]) -> Option<DVector<f64>> {
    let mut u = DVector::zeros(lambda.len());
    for (g, &l) in lambda.iter().enumerate() {
        if l > 0.0 {
            u[g] = 1.0 / l;
        } else if v.row(g).iter().any(|&x| x != 0.0) {
            return None;
        }
    }
    Some(u)
}

/// `⟪δB²⟫ = λ⁻¹ᵀ V λ⁻¹`; infinite when a zero weight meets a nonzero row.
pub fn crb_variance(v: &VarianceMatrix, design: &Design) -> Result<f64> {
    design.check_len(v.matrix.nrows())?;
    Ok(match inverse_weights(&v.matrix, design.weights()) {
        Some(u) => u.dot(&(&v.matrix * &u)),
        None => f64::INFINITY,
    })
}

/// `‖Vλ⁻¹ − ηλ²‖` with `η = λ⁻¹ᵀVλ⁻¹` (the value the multiplier must take).
pub fn stationarity_residual(v: &VarianceMatrix, design: &Design) -> f64 {
    let Some(u) = inverse_weights(&v.matrix, design.weights()) else {
        return f64::INFINITY;
    };
    let vu = &v.matrix * &u;
    let eta = u.dot(&vu);
    let l = design.as_vector();
    (vu - l.component_mul(&l) * eta).norm()
}

struct Objective<'a>(&'a DMatrix<f64>);

impl SimplexObjective for Objective<'_> {
    fn dimension(&self) -> usize {
        self.0.nrows()
    }

    fn value(&self, lambda: &[f64]) -> f64 {
        match inverse_weights(self.0, lambda) {
            Some(u) => u.dot(&(self.0 * &u)),
            None => f64::INFINITY,
        }
    }

    fn evaluate(&self, lambda: &[f64]) -> Result<Evaluation> {
        let u = inverse_weights(self.0, lambda).ok_or(Error::InvalidDesign("zero weight".into()))?;
        let vu = self.0 * &u;
        let m = lambda.len();
        let gradient = DVector::from_fn(m, |g, _| -2.0 * vu[g] * u[g] * u[g]);
        let hessian = DMatrix::from_fn(m, m, |g, h| {
            let mut x = 2.0 * self.0[(g, h)] * u[g] * u[g] * u[h] * u[h];
            if g == h {
                x += 4.0 * vu[g] * u[g] * u[g] * u[g];
            }
            x
        });
        Ok(Evaluation {
            value: u.dot(&vu),
            gradient,
            hessian,
        })
    }
}

/// Settings used by [`odt_design`]: a tighter KKT tolerance so that the
/// stationarity residual comfortably meets `1e-8`.
pub fn odt_settings() -> OptimizerSettings {
    OptimizerSettings {
        tolerance: 1e-11,
        ..Default::default()
    }
}

/// Minimizes `⟪δB²⟫` over the simplex.
pub fn odt_design(v: &VarianceMatrix, settings: &OptimizerSettings) -> Result<Solution> {
    if v.matrix.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidDesign("variance matrix is zero".into()));
    }
    minimize_on_simplex(&Objective(&v.matrix), settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::{state_space_radius, RadiusMode};
    use crate::rng::stream;
    use crate::setups::{qubit_mub, random_binary_qubit, random_minimal_binary_qubit};
    use proptest::prelude::*;

    fn qubit() -> StateSpaceRadius {
        state_space_radius(2, RadiusMode::Min).unwrap()
    }

    #[test]
    fn mub_variance_is_symmetric_and_odt_uniform() {
        let v = variance_matrix(&qubit_mub(), &qubit()).unwrap();
        let m = &v.matrix;
        assert!((m[(0, 0)] - m[(1, 1)]).abs() < 1e-14 && (m[(1, 1)] - m[(2, 2)]).abs() < 1e-14);
        assert!((m[(0, 1)] - m[(1, 2)]).abs() < 1e-14 && (m[(0, 2)] - m[(0, 1)]).abs() < 1e-14);
        let sol = odt_design(&v, &odt_settings()).unwrap();
        for w in sol.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn variance_arithmetic() {
        let v = VarianceMatrix::from_matrix(DMatrix::identity(3, 3));
        assert!((crb_variance(&v, &Design::uniform(3)).unwrap() - 27.0).abs() < 1e-12);
        let z = VarianceMatrix::from_matrix(DMatrix::zeros(3, 3));
        assert_eq!(crb_variance(&z, &Design::uniform(3)).unwrap(), 0.0);
        assert!(crb_variance(&v, &Design::new(vec![0.0, 0.5, 0.5]).unwrap()).unwrap().is_infinite());
        assert!(odt_design(&z, &odt_settings()).is_err());
    }

    #[test]
    fn diagonal_variance_gives_cube_root_rule() {
        let vals = [1.0, 8.0, 27.0];
        let v = VarianceMatrix::from_matrix(DMatrix::from_diagonal(&DVector::from_row_slice(&vals)));
        let sol = odt_design(&v, &odt_settings()).unwrap();
        for (w, e) in sol.weights().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((w - e).abs() < 1e-10);
        }
        let exact = Design::new(vec![1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]).unwrap();
        assert!(stationarity_residual(&v, &exact) < 1e-10);
    }

    #[test]
    fn non_minimal_setup_is_rejected() {
        let mut rng = stream(4, &[]);
        let s = random_binary_qubit(&mut rng, 4);
        assert!(matches!(variance_matrix(&s, &qubit()), Err(Error::NotMinimal { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn variance_matrix_is_psd_and_odt_is_stationary(seed in any::<u64>()) {
            let mut rng = stream(seed, &[]);
            let s = random_minimal_binary_qubit(&mut rng);
            let v = variance_matrix(&s, &qubit()).unwrap();
            prop_assert!((&v.matrix - v.matrix.transpose()).amax() < 1e-10);
            let eig = v.matrix.clone().symmetric_eigenvalues();
            prop_assert!(eig.min() >= -1e-10);
            let sol = odt_design(&v, &odt_settings()).unwrap();
            prop_assert!(stationarity_residual(&v, &sol.design) < 1e-8);
            let uniform = crb_variance(&v, &Design::uniform(3)).unwrap();
            prop_assert!(sol.objective <= uniform * (1.0 + 1e-12));
        }

        #[test]
        fn quadratic_form_matches_double_sum(entries in prop::collection::vec(-1.0f64..1.0, 9), w in prop::collection::vec(0.05f64..1.0, 3)) {
            let m = DMatrix::from_row_slice(3, 3, &entries);
            let v = VarianceMatrix::from_matrix(&m + m.transpose());
            let d = Design::normalized(w).unwrap();
            let mut direct = 0.0;
            for g in 0..3 {
                for h in 0..3 {
                    direct += v.matrix[(g, h)] / (d.weights()[g] * d.weights()[h]);
                }
            }
            let q = crb_variance(&v, &d).unwrap();
            prop_assert!((q - direct).abs() < 1e-12 * direct.abs().max(1.0));
        }
    }
}
