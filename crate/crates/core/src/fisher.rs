//! Fisher information, the Cramér–Rao bound and the minimal-tomography kernel.
//!
//! For a design `λ` the Fisher information per measurement is
//! `F = Σ_γ λ_γ Σ_α a_αγ a_αγᵀ / p_αγ` and the bound is `B = tr{F⁻¹}`.
//! When the reduced matrix `Ã` is square the bound separates into
//! `B = Σ_γ Σ_α′ b_α′γ / λ_γ` with `b = p̃ ∗ (d − D p̃)`, where `D` holds the
//! diagonal blocks of `K⁻¹ = (ÃÃᵀ)⁻¹` and `d = diag(D)`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{singular_range, SymInverse};
use crate::repr::{probabilities, ExperimentSetup};
use crate::{Error, Result};

/// Probabilities below this with positive design weight are an error.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Tolerance on `Σλ = 1` accepted by [`Design::new`].
const SUM_TOLERANCE: f64 = 1e-9;

/// Fractions of the measurement budget per configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Design {
    weights: Vec<f64>,
}

impl Design {
    /// Checks nonnegativity and unit sum, then rescales the sum to exactly 1.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDesign("empty design".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidDesign(format!("weight {w} is not a nonnegative number")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDesign(format!("weights sum to {sum}")));
        }
        Ok(Design {
            weights: weights.iter().map(|w| w / sum).collect(),
        })
    }

    /// Normalizes arbitrary nonnegative weights.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidDesign(format!("weights sum to {sum}")));
        }
        Self::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn uniform(m: usize) -> Self {
        Design {
            weights: vec![1.0 / m as f64; m],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    pub(crate) fn check_len(&self, m: usize) -> Result<()> {
        if self.len() != m {
            return Err(Error::LengthMismatch {
                got: self.len(),
                expected: m,
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Design {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Design::new(v)
    }
}

impl From<Design> for Vec<f64> {
    fn from(d: Design) -> Self {
        d.weights
    }
}

/// A Fisher matrix with its bound.
#[derive(Debug, Clone)]
pub struct FisherBundle {
    pub matrix: DMatrix<f64>,
    /// `tr{F⁻¹}`, infinite when singular.
    pub crb: f64,
    pub singular: bool,
    pub eigenvalues: DVector<f64>,
}

impl FisherBundle {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let inv = SymInverse::new(&matrix);
        FisherBundle {
            crb: inv.trace_inverse(),
            singular: inv.singular,
            eigenvalues: inv.eigenvalues,
            matrix,
        }
    }
}

/// `Rowsᵀ diag(w) Rows` without materializing the diagonal.
pub(crate) fn weighted_gram(rows: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = rows.clone();
    for (i, mut r) in scaled.row_iter_mut().enumerate() {
        r *= w[i];
    }
    rows.transpose() * scaled
}

/// Per-outcome weights `λ_γ/p_αγ`, checking the probability floor.
pub(crate) fn state_weights(
    setup: &ExperimentSetup,
    design: &Design,
    p: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut w = DVector::zeros(p.len());
    for (g, block) in setup.blocks().iter().enumerate() {
        let lambda = design.weights()[g];
        if lambda == 0.0 {
            continue;
        }
        for i in block.clone() {
            if p[i] < PROBABILITY_FLOOR {
                return Err(Error::SingularStatistics {
                    config: setup.configs()[g].label.clone(),
                    outcome: i - block.start,
                    probability: p[i],
                });
            }
            w[i] = lambda / p[i];
        }
    }
    Ok(w)
}

/// Fisher information `F = AᵀΛP⁻¹A` at Bloch vector `r`.
pub fn fisher_info(setup: &ExperimentSetup, design: &Design, r: &DVector<f64>) -> Result<FisherBundle> {
    design.check_len(setup.num_configs())?;
    let p = probabilities(setup, r)?;
    let w = state_weights(setup, design, &p)?;
    Ok(FisherBundle::from_matrix(weighted_gram(setup.a(), &w)))
}

/// State-independent part of the minimal kernel.
#[derive(Debug, Clone)]
pub struct KernelGeometry {
    /// `K = ÃÃᵀ`.
    pub k: DMatrix<f64>,
    pub k_inv: DMatrix<f64>,
    /// Block-diagonal part of `K⁻¹`.
    pub d_block: DMatrix<f64>,
    /// `diag(K⁻¹)`.
    pub d: DVector<f64>,
    /// Reduced outcome ranges per configuration.
    pub blocks: Vec<Range<usize>>,
}

/// Builds `K`, `D` and `d` for a minimal setup.
pub fn kernel_geometry(setup: &ExperimentSetup) -> Result<KernelGeometry> {
    if !setup.is_minimal() {
        return Err(Error::NotMinimal {
            independent: setup.kept().len(),
            parameters: setup.parameters(),
        });
    }
    let at = setup.a_reduced();
    let (min, max) = singular_range(at);
    if !(max > 0.0) || min < 1e-12 * max {
        return Err(Error::RankDeficient(if max > 0.0 { min / max } else { 0.0 }));
    }
    let k = at * at.transpose();
    let k_inv = k.clone().try_inverse().ok_or(Error::RankDeficient(min / max))?;
    let k_inv = 0.5 * (&k_inv + k_inv.transpose());
    let n = k.nrows();
    let blocks = setup.reduced_blocks().to_vec();
    let mut d_block = DMatrix::zeros(n, n);
    for b in &blocks {
        for i in b.clone() {
            for j in b.clone() {
                d_block[(i, j)] = k_inv[(i, j)];
            }
        }
    }
    let d = k_inv.diagonal();
    Ok(KernelGeometry {
        k,
        k_inv,
        d_block,
        d,
        blocks,
    })
}

impl KernelGeometry {
    /// `Σ_α′ v_α′γ` per configuration.
    pub fn block_sums(&self, v: &DVector<f64>) -> Vec<f64> {
        self.blocks.iter().map(|b| v.rows(b.start, b.len()).sum()).collect()
    }
}

/// Kernel objects at a particular state.
#[derive(Debug, Clone)]
pub struct MinimalKernel {
    pub geometry: KernelGeometry,
    /// Reduced probabilities `p̃`.
    pub p_reduced: DVector<f64>,
    /// `b = p̃ ∗ (d − D p̃)`.
    pub b: DVector<f64>,
}

impl MinimalKernel {
    pub fn block_sums(&self) -> Vec<f64> {
        self.geometry.block_sums(&self.b)
    }
}

/// `b` vector from reduced probabilities.
pub(crate) fn kernel_b(geometry: &KernelGeometry, p: &DVector<f64>) -> DVector<f64> {
    let dp = &geometry.d_block * p;
    p.component_mul(&(&geometry.d - dp))
}

/// Minimal-tomography kernel at Bloch vector `r`.
pub fn minimal_kernel(setup: &ExperimentSetup, r: &DVector<f64>) -> Result<MinimalKernel> {
    let geometry = kernel_geometry(setup)?;
    minimal_kernel_with(setup, &geometry, r)
}

/// As [`minimal_kernel`], reusing a precomputed geometry.
pub fn minimal_kernel_with(
    setup: &ExperimentSetup,
    geometry: &KernelGeometry,
    r: &DVector<f64>,
) -> Result<MinimalKernel> {
    if r.len() != setup.parameters() {
        return Err(Error::LengthMismatch {
            got: r.len(),
            expected: setup.parameters(),
        });
    }
    let p_reduced = setup.c_reduced() + setup.a_reduced() * r;
    let b = kernel_b(geometry, &p_reduced);
    Ok(MinimalKernel {
        geometry: geometry.clone(),
        p_reduced,
        b,
    })
}

/// `Σ_γ s_γ/λ_γ`; infinite if a zero weight meets a positive block sum.
pub fn crb_from_block_sums(sums: &[f64], design: &Design) -> f64 {
    let mut total = 0.0;
    for (&s, &l) in sums.iter().zip(design.weights()) {
        if l == 0.0 {
            if s > 0.0 {
                return f64::INFINITY;
            }
        } else {
            total += s / l;
        }
    }
    total
}

/// `B = Σ b_α′γ / λ_γ`.
pub fn crb_minimal(kernel: &MinimalKernel, design: &Design) -> Result<f64> {
    design.check_len(kernel.geometry.blocks.len())?;
    Ok(crb_from_block_sums(&kernel.block_sums(), design))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::setups::{qubit_mub, random_binary_qubit, random_minimal_binary_qubit, random_qubit_state};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn mub_fisher_at_origin() {
        let s = qubit_mub();
        let f = fisher_info(&s, &Design::uniform(3), &DVector::zeros(3)).unwrap();
        assert_abs_diff_eq!(f.matrix, DMatrix::identity(3, 3) * (2.0 / 3.0), epsilon = 1e-14);
        assert_abs_diff_eq!(f.crb, 4.5, epsilon = 1e-12);
        assert!(!f.singular);
    }

    #[test]
    fn rank_deficient_setup_is_flagged() {
        let s = qubit_mub();
        let d = Design::new(vec![0.5, 0.5, 0.0]).unwrap();
        let f = fisher_info(&s, &d, &DVector::zeros(3)).unwrap();
        assert!(f.singular);
        assert!(f.crb.is_infinite());
    }

    #[test]
    fn zero_probability_with_weight_is_an_error() {
        let s = qubit_mub();
        let r = DVector::from_vec(vec![0.0, 0.0, std::f64::consts::FRAC_1_SQRT_2]);
        let err = fisher_info(&s, &Design::uniform(3), &r).unwrap_err();
        assert!(matches!(err, Error::SingularStatistics { outcome: 1, .. }), "{err}");
        // Without weight on that configuration the statistics are fine.
        let f = fisher_info(&s, &Design::new(vec![0.5, 0.5, 0.0]).unwrap(), &r).unwrap();
        assert!(f.singular);
    }

    #[test]
    fn mub_kernel() {
        let s = qubit_mub();
        let k = minimal_kernel(&s, &DVector::zeros(3)).unwrap();
        assert_abs_diff_eq!(k.geometry.d, DVector::from_element(3, 2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(k.b, DVector::from_element(3, 0.5), epsilon = 1e-12);
        assert_abs_diff_eq!(crb_minimal(&k, &Design::uniform(3)).unwrap(), 4.5, epsilon = 1e-12);
    }

    #[test]
    fn crb_minimal_edge_cases() {
        let mut k = minimal_kernel(&qubit_mub(), &DVector::zeros(3)).unwrap();
        let d = Design::new(vec![0.0, 0.5, 0.5]).unwrap();
        assert!(crb_minimal(&k, &d).unwrap().is_infinite());
        k.b.fill(0.0);
        assert_eq!(crb_minimal(&k, &Design::uniform(3)).unwrap(), 0.0);
    }

    #[test]
    fn non_minimal_setup_is_rejected() {
        let mut rng = stream(3, &[]);
        let s = random_binary_qubit(&mut rng, 4);
        assert!(matches!(
            minimal_kernel(&s, &DVector::zeros(3)),
            Err(Error::NotMinimal {
                independent: 4,
                parameters: 3
            })
        ));
    }

    #[test]
    fn design_validation() {
        assert!(Design::new(vec![0.5, 0.6]).is_err());
        assert!(Design::new(vec![-0.1, 1.1]).is_err());
        assert!(Design::new(vec![]).is_err());
        let d: Design = serde_json::from_str("[0.25, 0.75]").unwrap();
        assert_eq!(d.weights(), &[0.25, 0.75]);
        assert!(serde_json::from_str::<Design>("[0.25, 0.25]").is_err());
    }

    fn explicit_sum(s: &ExperimentSetup, d: &Design, r: &DVector<f64>) -> DMatrix<f64> {
        let p = probabilities(s, r).unwrap();
        let mut f = DMatrix::zeros(3, 3);
        for (g, b) in s.blocks().iter().enumerate() {
            for i in b.clone() {
                let a = s.a().row(i).transpose();
                f += &a * a.transpose() * (d.weights()[g] / p[i]);
            }
        }
        f
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn factored_form_matches_outer_products(seed in any::<u64>(), w in prop::collection::vec(0.05f64..1.0, 3)) {
            let mut rng = stream(seed, &[]);
            let s = random_minimal_binary_qubit(&mut rng);
            let r = random_qubit_state(&mut rng, 0.95);
            let d = Design::normalized(w).unwrap();
            let f = fisher_info(&s, &d, &r).unwrap();
            prop_assert!((f.matrix - explicit_sum(&s, &d, &r)).amax() < 1e-10);
        }

        #[test]
        fn kernel_matches_inverse_and_deletion_choice(seed in any::<u64>(), w in prop::collection::vec(0.05f64..1.0, 3), choice in prop::collection::vec(0usize..2, 3)) {
            let mut rng = stream(seed, &[]);
            let s = random_minimal_binary_qubit(&mut rng);
            let r = random_qubit_state(&mut rng, 0.95);
            let d = Design::normalized(w).unwrap();
            let direct = fisher_info(&s, &d, &r).unwrap().crb;
            let k = crb_minimal(&minimal_kernel(&s, &r).unwrap(), &d).unwrap();
            prop_assert!((direct - k).abs() < 1e-8 * direct.max(1.0));
            let other = s.with_eliminated_outcomes(&choice).unwrap();
            let k2 = crb_minimal(&minimal_kernel(&other, &r).unwrap(), &d).unwrap();
            prop_assert!((k2 - k).abs() < 1e-8 * k.max(1.0));
        }

        #[test]
        fn fisher_is_linear_in_design(seed in any::<u64>(), t in 0.0f64..1.0) {
            let mut rng = stream(seed, &[]);
            let s = random_binary_qubit(&mut rng, 4);
            let r = random_qubit_state(&mut rng, 0.9);
            let d1 = Design::normalized(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
            let d2 = Design::normalized(vec![0.7, 0.1, 0.1, 0.1]).unwrap();
            let mix: Vec<f64> = d1.weights().iter().zip(d2.weights()).map(|(a, b)| t * a + (1.0 - t) * b).collect();
            let f = fisher_info(&s, &Design::new(mix).unwrap(), &r).unwrap().matrix;
            let f1 = fisher_info(&s, &d1, &r).unwrap().matrix;
            let f2 = fisher_info(&s, &d2, &r).unwrap().matrix;
            prop_assert!((f - (f1 * t + f2 * (1.0 - t))).amax() < 1e-10);
        }
    }
}
