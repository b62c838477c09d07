//! JSON file formats for experiment specs and states.
//!
//! Spec file:
//!
//! ```json
//! {"dimension": 2,
//!  "configurations": [{"label": "z", "elements": [{"re": [[1,0],[0,0]], "im": [[0,0],[0,0]]}, ...]}]}
//! ```
//!
//! Matrices are row-major; `im` may be omitted for real matrices.
//! State file: `{"bloch": [...]}` or `{"density": {"re": ..., "im": ...}}`.

use std::path::Path;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::repr::{density_to_bloch, BlochState, HermitianBasis, RawConfiguration, RawSetup};
use crate::{CMatrix, Error, Result};

/// A complex matrix as separate real and imaginary row-major arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub im: Vec<Vec<f64>>,
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<CMatrix> {
        let rows = self.re.len();
        let cols = self.re.first().map_or(0, Vec::len);
        let ragged = self.re.iter().any(|r| r.len() != cols)
            || (!self.im.is_empty()
                && (self.im.len() != rows || self.im.iter().any(|r| r.len() != cols)));
        if ragged || rows != cols {
            return Err(Error::Shape {
                rows,
                cols,
                expected: rows,
            });
        }
        Ok(CMatrix::from_fn(rows, cols, |i, j| {
            let im = if self.im.is_empty() { 0.0 } else { self.im[i][j] };
            Complex64::new(self.re[i][j], im)
        }))
    }

    pub fn from_matrix(m: &CMatrix) -> Self {
        let re = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)].re).collect())
            .collect();
        let im = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)].im).collect())
            .collect();
        MatrixJson { re, im }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigurationJson {
    pub label: String,
    pub elements: Vec<MatrixJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecJson {
    pub dimension: usize,
    pub configurations: Vec<ConfigurationJson>,
}

impl SpecJson {
    pub fn to_raw(&self) -> Result<RawSetup> {
        let mut configurations = Vec::with_capacity(self.configurations.len());
        for c in &self.configurations {
            configurations.push(RawConfiguration {
                label: c.label.clone(),
                elements: c
                    .elements
                    .iter()
                    .map(MatrixJson::to_matrix)
                    .collect::<Result<_>>()?,
            });
        }
        Ok(RawSetup {
            dimension: self.dimension,
            configurations,
        })
    }

    pub fn from_raw(raw: &RawSetup) -> Self {
        SpecJson {
            dimension: raw.dimension,
            configurations: raw
                .configurations
                .iter()
                .map(|c| ConfigurationJson {
                    label: c.label.clone(),
                    elements: c.elements.iter().map(MatrixJson::from_matrix).collect(),
                })
                .collect(),
        }
    }
}

pub fn parse_spec(text: &str) -> Result<RawSetup> {
    let spec: SpecJson = serde_json::from_str(text)?;
    spec.to_raw()
}

pub fn read_spec(path: &Path) -> Result<RawSetup> {
    parse_spec(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateJson {
    Bloch(Vec<f64>),
    Density(MatrixJson),
}

impl StateJson {
    pub fn to_state(&self, basis: &HermitianBasis) -> Result<BlochState> {
        match self {
            StateJson::Bloch(r) => BlochState::new(DVector::from_vec(r.clone()), basis),
            StateJson::Density(m) => density_to_bloch(&m.to_matrix()?, basis),
        }
    }
}

pub fn parse_state(text: &str, basis: &HermitianBasis) -> Result<BlochState> {
    let state: StateJson = serde_json::from_str(text)?;
    state.to_state(basis)
}

pub fn read_state(path: &Path, basis: &HermitianBasis) -> Result<BlochState> {
    parse_state(&std::fs::read_to_string(path)?, basis)
}
