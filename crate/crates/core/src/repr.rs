//! Bloch (Fano) representation of states and measurements.
//!
//! A density matrix is written `ρ = I/N + Σ_j r_j σ_j` in an orthonormal
//! basis of traceless Hermitian matrices, `tr{σ_j σ_k} = δ_jk`. Every POVM
//! element becomes `Π = c I + Σ_j a_j σ_j`, so outcome probabilities are
//! affine in the state: `p = c + A r`.
//!
//! The basis is the generalized Gell-Mann set in a fixed order:
//!
//! 1. symmetric pairs `(E_jk + E_kj)/√2` for `j < k`, lexicographic in `(j, k)`;
//! 2. antisymmetric pairs `−i(E_jk − E_kj)/√2` for `j < k`, same order;
//! 3. diagonals `diag(1, …, 1, −m, 0, …)/√(m(m+1))` for `m = 1 … N−1`.
//!
//! For `N = 2` this is `(σ_x, σ_y, σ_z)/√2`.

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::linalg::{hermitian_defect, min_eigenvalue, singular_range, trace_product};
use crate::{CMatrix, Error, Result};

/// Tolerance on Hermiticity, trace and completeness of user input.
pub const INPUT_TOLERANCE: f64 = 1e-10;
/// Eigenvalues above `-POSITIVITY_TOLERANCE` count as nonnegative.
pub const POSITIVITY_TOLERANCE: f64 = 1e-10;

/// Orthonormal basis of traceless Hermitian `N×N` matrices.
#[derive(Debug, Clone)]
pub struct HermitianBasis {
    dimension: usize,
    elements: Vec<CMatrix>,
}

/// Builds the generalized Gell-Mann basis for dimension `n`.
pub fn generate_basis(n: usize) -> Result<HermitianBasis> {
    if n < 2 {
        return Err(Error::InvalidDimension(n));
    }
    let zero = Complex64::new(0.0, 0.0);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut elements = Vec::with_capacity(n * n - 1);
    for j in 0..n {
        for k in j + 1..n {
            let mut m = CMatrix::from_element(n, n, zero);
            m[(j, k)] = Complex64::new(s, 0.0);
            m[(k, j)] = Complex64::new(s, 0.0);
            elements.push(m);
        }
    }
    for j in 0..n {
        for k in j + 1..n {
            let mut m = CMatrix::from_element(n, n, zero);
            m[(j, k)] = Complex64::new(0.0, -s);
            m[(k, j)] = Complex64::new(0.0, s);
            elements.push(m);
        }
    }
    for m in 1..n {
        let norm = 1.0 / ((m * (m + 1)) as f64).sqrt();
        let mut d = CMatrix::from_element(n, n, zero);
        for i in 0..m {
            d[(i, i)] = Complex64::new(norm, 0.0);
        }
        d[(m, m)] = Complex64::new(-(m as f64) * norm, 0.0);
        elements.push(d);
    }
    Ok(HermitianBasis {
        dimension: n,
        elements,
    })
}

impl HermitianBasis {
    pub fn new(n: usize) -> Result<Self> {
        generate_basis(n)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of elements, `N² − 1`.
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[CMatrix] {
        &self.elements
    }

    /// Gram matrix `tr{σ_j σ_k}` (real part).
    pub fn gram(&self) -> DMatrix<f64> {
        let d = self.len();
        DMatrix::from_fn(d, d, |j, k| {
            trace_product(&self.elements[j], &self.elements[k]).re
        })
    }

    /// Coordinates `tr{X σ_j}` of a Hermitian matrix.
    pub fn coordinates(&self, x: &CMatrix) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.elements.iter().map(|s| trace_product(x, s).re),
        )
    }

    /// `offset·I + Σ_j v_j σ_j`.
    pub fn combine(&self, offset: f64, v: &DVector<f64>) -> CMatrix {
        let n = self.dimension;
        let mut m = CMatrix::identity(n, n) * Complex64::new(offset, 0.0);
        for (s, &x) in self.elements.iter().zip(v.iter()) {
            if x != 0.0 {
                m += s * Complex64::new(x, 0.0);
            }
        }
        m
    }

    fn check_square(&self, m: &CMatrix) -> Result<()> {
        if m.nrows() != self.dimension || m.ncols() != self.dimension {
            return Err(Error::Shape {
                rows: m.nrows(),
                cols: m.ncols(),
                expected: self.dimension,
            });
        }
        Ok(())
    }
}

/// A state in Bloch coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochState {
    pub r: DVector<f64>,
    /// All eigenvalues of `ρ` are ≥ −1e-10.
    pub physical: bool,
}

impl BlochState {
    /// Wraps a Bloch vector, checking physicality.
    pub fn new(r: DVector<f64>, basis: &HermitianBasis) -> Result<Self> {
        let rho = bloch_to_density(&r, basis)?;
        Ok(BlochState {
            physical: min_eigenvalue(&rho) >= -POSITIVITY_TOLERANCE,
            r,
        })
    }
}

/// `r_j = tr{ρ σ_j}` for a Hermitian unit-trace `ρ`.
pub fn density_to_bloch(rho: &CMatrix, basis: &HermitianBasis) -> Result<BlochState> {
    basis.check_square(rho)?;
    let defect = hermitian_defect(rho);
    if defect > INPUT_TOLERANCE {
        return Err(Error::NotHermitian(defect));
    }
    let tr = rho.trace();
    if (tr - Complex64::new(1.0, 0.0)).norm() > INPUT_TOLERANCE {
        return Err(Error::InvalidTrace(tr.re));
    }
    Ok(BlochState {
        r: basis.coordinates(rho),
        physical: min_eigenvalue(rho) >= -POSITIVITY_TOLERANCE,
    })
}

/// `ρ = I/N + r·σ`.
pub fn bloch_to_density(r: &DVector<f64>, basis: &HermitianBasis) -> Result<CMatrix> {
    if r.len() != basis.len() {
        return Err(Error::LengthMismatch {
            got: r.len(),
            expected: basis.len(),
        });
    }
    Ok(basis.combine(1.0 / basis.dimension() as f64, r))
}

/// One POVM element with its affine coordinates `Π = c I + a·σ`.
#[derive(Debug, Clone)]
pub struct PovmOutcome {
    pub matrix: CMatrix,
    pub offset: f64,
    pub direction: DVector<f64>,
}

/// Converts a positive semidefinite Hermitian matrix to `(c, a)`.
pub fn povm_to_affine(pi: &CMatrix, basis: &HermitianBasis) -> Result<PovmOutcome> {
    basis.check_square(pi)?;
    let defect = hermitian_defect(pi);
    if defect > INPUT_TOLERANCE {
        return Err(Error::NotHermitian(defect));
    }
    let min = min_eigenvalue(pi);
    if min < -POSITIVITY_TOLERANCE {
        return Err(Error::NotPositive(min));
    }
    Ok(PovmOutcome {
        matrix: pi.clone(),
        offset: pi.trace().re / basis.dimension() as f64,
        direction: basis.coordinates(pi),
    })
}

/// One measurement setting with its complete set of outcomes.
#[derive(Debug, Clone)]
pub struct MeasurementConfig {
    pub label: String,
    pub outcomes: Vec<PovmOutcome>,
}

/// Unvalidated configuration as read from a file.
#[derive(Debug, Clone)]
pub struct RawConfiguration {
    pub label: String,
    pub elements: Vec<CMatrix>,
}

/// Unvalidated experiment description.
#[derive(Debug, Clone)]
pub struct RawSetup {
    pub dimension: usize,
    pub configurations: Vec<RawConfiguration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Dimension,
    Shape,
    Hermiticity,
    Positivity,
    Completeness,
    Arity,
    BasisOrthonormality,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Configuration label, if the violation is tied to one.
    pub config: Option<String>,
    pub outcome: Option<usize>,
    pub magnitude: f64,
    pub detail: String,
}

/// Every violated invariant of a setup; empty means valid.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "no violations");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{}", v.detail)?;
        }
        Ok(())
    }
}

/// Checks completeness, positivity, Hermiticity and basis orthonormality.
pub fn validate_setup(raw: &RawSetup) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = raw.dimension;
    let basis = match generate_basis(n) {
        Ok(b) => b,
        Err(_) => {
            report.violations.push(Violation {
                kind: ViolationKind::Dimension,
                config: None,
                outcome: None,
                magnitude: n as f64,
                detail: format!("dimension {n} is below 2"),
            });
            return report;
        }
    };
    let gram_err = (basis.gram() - DMatrix::identity(basis.len(), basis.len())).amax();
    let trace_err = basis
        .elements()
        .iter()
        .map(|s| s.trace().norm())
        .fold(0.0, f64::max);
    if gram_err > 1e-12 || trace_err > 1e-12 {
        report.violations.push(Violation {
            kind: ViolationKind::BasisOrthonormality,
            config: None,
            outcome: None,
            magnitude: gram_err.max(trace_err),
            detail: format!("basis not orthonormal (error {:e})", gram_err.max(trace_err)),
        });
    }
    if raw.configurations.is_empty() {
        report.violations.push(Violation {
            kind: ViolationKind::Arity,
            config: None,
            outcome: None,
            magnitude: 0.0,
            detail: "no configurations".into(),
        });
    }
    for cfg in &raw.configurations {
        let label = Some(cfg.label.clone());
        if cfg.elements.len() < 2 {
            report.violations.push(Violation {
                kind: ViolationKind::Arity,
                config: label.clone(),
                outcome: None,
                magnitude: cfg.elements.len() as f64,
                detail: format!("'{}' has {} outcomes, need at least 2", cfg.label, cfg.elements.len()),
            });
        }
        let mut total = CMatrix::zeros(n, n);
        let mut shapes_ok = true;
        for (alpha, m) in cfg.elements.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                shapes_ok = false;
                report.violations.push(Violation {
                    kind: ViolationKind::Shape,
                    config: label.clone(),
                    outcome: Some(alpha),
                    magnitude: 0.0,
                    detail: format!(
                        "'{}' outcome {alpha} is {}x{}, expected {n}x{n}",
                        cfg.label,
                        m.nrows(),
                        m.ncols()
                    ),
                });
                continue;
            }
            if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                shapes_ok = false;
                report.violations.push(Violation {
                    kind: ViolationKind::Shape,
                    config: label.clone(),
                    outcome: Some(alpha),
                    magnitude: f64::NAN,
                    detail: format!("'{}' outcome {alpha} has non-finite entries", cfg.label),
                });
                continue;
            }
            total += m;
            let defect = hermitian_defect(m);
            if defect > INPUT_TOLERANCE {
                report.violations.push(Violation {
                    kind: ViolationKind::Hermiticity,
                    config: label.clone(),
                    outcome: Some(alpha),
                    magnitude: defect,
                    detail: format!("'{}' outcome {alpha} not Hermitian (defect {defect:e})", cfg.label),
                });
                continue;
            }
            let min = min_eigenvalue(m);
            if min < -POSITIVITY_TOLERANCE {
                report.violations.push(Violation {
                    kind: ViolationKind::Positivity,
                    config: label.clone(),
                    outcome: Some(alpha),
                    magnitude: -min,
                    detail: format!("'{}' outcome {alpha} has eigenvalue {min:e}", cfg.label),
                });
            }
        }
        if shapes_ok {
            // Σ_α c = 1 and Σ_α a = 0 together are Σ_α Π = I.
            let sum_c = total.trace().re / n as f64;
            let sum_a = basis.coordinates(&total).amax();
            let err = (total - CMatrix::identity(n, n)).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if err > INPUT_TOLERANCE {
                report.violations.push(Violation {
                    kind: ViolationKind::Completeness,
                    config: label.clone(),
                    outcome: None,
                    magnitude: err,
                    detail: format!(
                        "'{}' is incomplete: sum of c = {sum_c}, max |sum of a| = {sum_a:e}",
                        cfg.label
                    ),
                });
            }
        }
    }
    report
}

/// A validated experiment with its affine statistics map.
///
/// Outcomes are numbered globally in configuration order. The reduced
/// quantities drop one outcome per configuration (by default the last one),
/// which removes the redundancy `Σ_α p_αγ = 1`.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    basis: HermitianBasis,
    configs: Vec<MeasurementConfig>,
    a: DMatrix<f64>,
    c: DVector<f64>,
    blocks: Vec<Range<usize>>,
    eliminated: Vec<usize>,
    kept: Vec<usize>,
    reduced_blocks: Vec<Range<usize>>,
    a_reduced: DMatrix<f64>,
    c_reduced: DVector<f64>,
}

impl ExperimentSetup {
    /// Validates raw matrices and builds the setup.
    pub fn from_raw(raw: &RawSetup) -> Result<Self> {
        let report = validate_setup(raw);
        if !report.is_valid() {
            return Err(Error::InvalidSetup(report.to_string()));
        }
        let basis = generate_basis(raw.dimension)?;
        let mut configs = Vec::with_capacity(raw.configurations.len());
        for cfg in &raw.configurations {
            let outcomes = cfg
                .elements
                .iter()
                .map(|m| povm_to_affine(m, &basis))
                .collect::<Result<Vec<_>>>()?;
            configs.push(MeasurementConfig {
                label: cfg.label.clone(),
                outcomes,
            });
        }
        Self::assemble(basis, configs, None)
    }

    /// Convenience constructor from labelled element lists.
    pub fn from_elements(n: usize, configs: Vec<(String, Vec<CMatrix>)>) -> Result<Self> {
        let raw = RawSetup {
            dimension: n,
            configurations: configs
                .into_iter()
                .map(|(label, elements)| RawConfiguration { label, elements })
                .collect(),
        };
        Self::from_raw(&raw)
    }

    fn assemble(
        basis: HermitianBasis,
        configs: Vec<MeasurementConfig>,
        eliminated: Option<Vec<usize>>,
    ) -> Result<Self> {
        let d = basis.len();
        let n_tot: usize = configs.iter().map(|c| c.outcomes.len()).sum();
        let mut a = DMatrix::zeros(n_tot, d);
        let mut c = DVector::zeros(n_tot);
        let mut blocks = Vec::with_capacity(configs.len());
        let mut row = 0;
        for cfg in &configs {
            let start = row;
            for o in &cfg.outcomes {
                a.row_mut(row).copy_from(&o.direction.transpose());
                c[row] = o.offset;
                row += 1;
            }
            blocks.push(start..row);
        }
        let eliminated =
            eliminated.unwrap_or_else(|| configs.iter().map(|c| c.outcomes.len() - 1).collect());
        if eliminated.len() != configs.len() {
            return Err(Error::LengthMismatch {
                got: eliminated.len(),
                expected: configs.len(),
            });
        }
        let mut kept = Vec::with_capacity(n_tot - configs.len());
        let mut reduced_blocks = Vec::with_capacity(configs.len());
        for (block, &skip) in blocks.iter().zip(&eliminated) {
            if skip >= block.len() {
                return Err(Error::InvalidSetup(format!(
                    "eliminated outcome {skip} out of range"
                )));
            }
            let start = kept.len();
            kept.extend(block.clone().filter(|&i| i - block.start != skip));
            reduced_blocks.push(start..kept.len());
        }
        let a_reduced = a.select_rows(kept.iter());
        let c_reduced = DVector::from_iterator(kept.len(), kept.iter().map(|&i| c[i]));
        Ok(ExperimentSetup {
            basis,
            configs,
            a,
            c,
            blocks,
            eliminated,
            kept,
            reduced_blocks,
            a_reduced,
            c_reduced,
        })
    }

    /// Same setup with a different outcome eliminated per configuration
    /// (`choice[γ]` is the index within configuration `γ`).
    pub fn with_eliminated_outcomes(&self, choice: &[usize]) -> Result<Self> {
        Self::assemble(self.basis.clone(), self.configs.clone(), Some(choice.to_vec()))
    }

    pub fn basis(&self) -> &HermitianBasis {
        &self.basis
    }
    pub fn dimension(&self) -> usize {
        self.basis.dimension()
    }
    /// Number of Bloch parameters, `N² − 1`.
    pub fn parameters(&self) -> usize {
        self.basis.len()
    }
    pub fn configs(&self) -> &[MeasurementConfig] {
        &self.configs
    }
    /// Number of configurations `M`.
    pub fn num_configs(&self) -> usize {
        self.configs.len()
    }
    /// Total number of outcomes `n_tot`.
    pub fn num_outcomes(&self) -> usize {
        self.c.len()
    }
    /// Matrix whose rows are the directions `a_αγ`.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }
    /// Outcome index ranges per configuration.
    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }
    pub fn eliminated(&self) -> &[usize] {
        &self.eliminated
    }
    /// Full outcome index of every reduced outcome.
    pub fn kept(&self) -> &[usize] {
        &self.kept
    }
    pub fn reduced_blocks(&self) -> &[Range<usize>] {
        &self.reduced_blocks
    }
    pub fn a_reduced(&self) -> &DMatrix<f64> {
        &self.a_reduced
    }
    pub fn c_reduced(&self) -> &DVector<f64> {
        &self.c_reduced
    }
    /// `ñ_tot = N² − 1`.
    pub fn is_minimal(&self) -> bool {
        self.kept.len() == self.parameters()
    }
    pub fn is_binary(&self) -> bool {
        self.configs.iter().all(|c| c.outcomes.len() == 2)
    }
    /// Configuration index of every full outcome.
    pub fn config_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_outcomes()];
        for (g, b) in self.blocks.iter().enumerate() {
            for i in b.clone() {
                out[i] = g;
            }
        }
        out
    }

    /// Re-runs validation on the stored matrices.
    pub fn validate(&self) -> ValidationReport {
        validate_setup(&self.to_raw())
    }

    pub fn to_raw(&self) -> RawSetup {
        RawSetup {
            dimension: self.dimension(),
            configurations: self
                .configs
                .iter()
                .map(|c| RawConfiguration {
                    label: c.label.clone(),
                    elements: c.outcomes.iter().map(|o| o.matrix.clone()).collect(),
                })
                .collect(),
        }
    }

    /// True when `A` has full column rank.
    pub fn is_informationally_complete(&self) -> bool {
        let (min, max) = singular_range(&self.a);
        max > 0.0 && min > 1e-10 * max
    }
}

/// `p = c + A r` over all outcomes.
pub fn probabilities(setup: &ExperimentSetup, r: &DVector<f64>) -> Result<DVector<f64>> {
    if r.len() != setup.parameters() {
        return Err(Error::LengthMismatch {
            got: r.len(),
            expected: setup.parameters(),
        });
    }
    Ok(setup.c() + setup.a() * r)
}

/// Radius of the largest ball inside the state space, `1/√(N(N−1))`.
pub fn inner_radius(n: usize) -> f64 {
    1.0 / ((n * (n - 1)) as f64).sqrt()
}

/// Radius of the smallest ball containing the state space, `√((N−1)/N)`.
pub fn outer_radius(n: usize) -> f64 {
    ((n - 1) as f64 / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setups::{projector, qubit_mub};
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn qubit_basis_is_scaled_pauli() {
        let b = generate_basis(2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let x = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(s, 0.), c(s, 0.), c(0., 0.)]);
        let y = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -s), c(0., s), c(0., 0.)]);
        let z = CMatrix::from_row_slice(2, 2, &[c(s, 0.), c(0., 0.), c(0., 0.), c(-s, 0.)]);
        for (got, want) in b.elements().iter().zip([x, y, z]) {
            assert!((got - want).iter().all(|e| e.norm() < 1e-15));
        }
        assert_abs_diff_eq!(b.gram(), DMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn basis_counts_and_trace() {
        let b = generate_basis(3).unwrap();
        assert_eq!(b.len(), 8);
        for s in b.elements() {
            assert!(s.trace().norm() < 1e-12);
            assert!(hermitian_defect(s) < 1e-15);
        }
        assert!(matches!(generate_basis(1), Err(Error::InvalidDimension(1))));
    }

    #[test]
    fn maximally_mixed_has_zero_bloch_vector() {
        let b = generate_basis(2).unwrap();
        let rho = CMatrix::identity(2, 2) * c(0.5, 0.0);
        let s = density_to_bloch(&rho, &b).unwrap();
        assert!(s.r.amax() < 1e-15);
        assert!(s.physical);
        let back = bloch_to_density(&DVector::zeros(8), &generate_basis(3).unwrap()).unwrap();
        assert!((back - CMatrix::identity(3, 3) * c(1.0 / 3.0, 0.0)).camax() < 1e-15);
    }

    #[test]
    fn rejects_bad_density_matrices() {
        let b = generate_basis(2).unwrap();
        let rho = CMatrix::identity(2, 2);
        assert!(matches!(density_to_bloch(&rho, &b), Err(Error::InvalidTrace(_))));
        let mut h = CMatrix::identity(2, 2) * c(0.5, 0.0);
        h[(0, 1)] = c(0.1, 0.0);
        assert!(matches!(density_to_bloch(&h, &b), Err(Error::NotHermitian(_))));
        assert!(matches!(
            density_to_bloch(&CMatrix::identity(3, 3), &b),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn povm_affine_examples() {
        let b = generate_basis(2).unwrap();
        let id = povm_to_affine(&CMatrix::identity(2, 2), &b).unwrap();
        assert_abs_diff_eq!(id.offset, 1.0);
        assert!(id.direction.amax() < 1e-15);
        let zero = povm_to_affine(&CMatrix::zeros(2, 2), &b).unwrap();
        assert_eq!(zero.offset, 0.0);
        assert!(zero.direction.amax() == 0.0);
        let p0 = povm_to_affine(&projector(&[c(1., 0.), c(0., 0.)]), &b).unwrap();
        assert_abs_diff_eq!(p0.offset, 0.5);
        assert_abs_diff_eq!(p0.direction[0], 0.0);
        assert_abs_diff_eq!(p0.direction[1], 0.0);
        assert_abs_diff_eq!(p0.direction[2], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        let mut neg = CMatrix::identity(2, 2);
        neg[(1, 1)] = c(-0.1, 0.0);
        assert!(matches!(povm_to_affine(&neg, &b), Err(Error::NotPositive(_))));
    }

    #[test]
    fn sigma_z_eigenstate_probabilities() {
        let setup = qubit_mub();
        let r = DVector::from_vec(vec![0.0, 0.0, std::f64::consts::FRAC_1_SQRT_2]);
        let p = probabilities(&setup, &r).unwrap();
        assert_abs_diff_eq!(p[4], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[5], 0.0, epsilon = 1e-15);
        let p0 = probabilities(&setup, &DVector::zeros(3)).unwrap();
        assert_eq!(&p0, setup.c());
    }

    #[test]
    fn validation_reports() {
        assert!(qubit_mub().validate().is_valid());
        let raw = RawSetup {
            dimension: 2,
            configurations: vec![RawConfiguration {
                label: "dup".into(),
                elements: vec![CMatrix::identity(2, 2), CMatrix::identity(2, 2)],
            }],
        };
        let rep = validate_setup(&raw);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].kind, ViolationKind::Completeness);
        assert!(rep.violations[0].detail.contains("sum of c = 2"));

        let mut e0 = CMatrix::identity(2, 2);
        e0[(1, 1)] = c(-0.1, 0.0);
        let mut e1 = CMatrix::zeros(2, 2);
        e1[(1, 1)] = c(1.1, 0.0);
        let raw = RawSetup {
            dimension: 2,
            configurations: vec![RawConfiguration {
                label: "neg".into(),
                elements: vec![e0, e1],
            }],
        };
        let rep = validate_setup(&raw);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].kind, ViolationKind::Positivity);
        assert_abs_diff_eq!(rep.violations[0].magnitude, 0.1, epsilon = 1e-12);
        assert!(ExperimentSetup::from_raw(&raw).is_err());
    }

    #[test]
    fn reduced_matrices_drop_last_outcome() {
        let s = qubit_mub();
        assert_eq!(s.num_outcomes(), 6);
        assert_eq!(s.kept(), &[0, 2, 4]);
        assert!(s.is_minimal());
        assert!(s.is_binary());
        for (i, &k) in s.kept().iter().enumerate() {
            assert_eq!(s.a_reduced().row(i), s.a().row(k));
        }
        let other = s.with_eliminated_outcomes(&[0, 1, 0]).unwrap();
        assert_eq!(other.kept(), &[1, 2, 5]);
    }
}
