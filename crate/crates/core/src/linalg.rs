//! Small numerical helpers shared by the modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::CMatrix;

/// Relative threshold below which a symmetric matrix counts as singular.
pub(crate) const SINGULAR_RATIO: f64 = 1e-12;

/// `tr{XY}` for complex square matrices without forming the product.
pub(crate) fn trace_product(x: &CMatrix, y: &CMatrix) -> Complex64 {
    let n = x.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += x[(i, j)] * y[(j, i)];
        }
    }
    acc
}

/// Largest entry of `|M − M†|`.
pub(crate) fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues (ascending) of a Hermitian matrix. The 2×2 case uses the
/// closed form, which is much faster in the simulation loops.
pub(crate) fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 2 {
        let a = m[(0, 0)].re;
        let d = m[(1, 1)].re;
        let off = m[(0, 1)].norm();
        let mean = 0.5 * (a + d);
        let half = (0.25 * (a - d) * (a - d) + off * off).sqrt();
        return vec![mean - half, mean + half];
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

pub(crate) fn min_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m)[0]
}

/// Symmetric eigen-decomposition with the singularity test used for every
/// Fisher matrix in the crate.
pub(crate) struct SymInverse {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub singular: bool,
}

impl SymInverse {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let sym = 0.5 * (m + m.transpose());
        let eig = SymmetricEigen::new(sym);
        let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
        let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let singular = !(max > 0.0) || min < SINGULAR_RATIO * max;
        SymInverse {
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            singular,
        }
    }

    /// `tr{M⁻¹}`, or infinity when singular.
    pub fn trace_inverse(&self) -> f64 {
        if self.singular {
            return f64::INFINITY;
        }
        neumaier(self.eigenvalues.iter().map(|&e| 1.0 / e))
    }

    /// `M^{-k}` assembled from the eigen-decomposition.
    pub fn inverse_power(&self, k: i32) -> Option<DMatrix<f64>> {
        if self.singular {
            return None;
        }
        let scaled = DMatrix::from_fn(
            self.eigenvectors.nrows(),
            self.eigenvectors.ncols(),
            |i, j| self.eigenvectors[(i, j)] * self.eigenvalues[j].powi(-k),
        );
        Some(&scaled * self.eigenvectors.transpose())
    }
}

/// Compensated (Neumaier) summation.
pub(crate) fn neumaier<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Smallest and largest singular values.
pub(crate) fn singular_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    let min = sv.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    (min, max)
}
