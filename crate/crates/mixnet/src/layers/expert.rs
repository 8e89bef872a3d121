use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{BandedMatrix, LowRankMatrix, Matrix};

/// One expert map of the gated output MoE. Dense and low-rank experts are
/// rectangular affine maps; banded experts are square with stored diagonals
/// only, so their gradient lives on the band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExpertMap {
    Dense(Matrix),
    LowRank(LowRankMatrix),
    Banded(BandedMatrix),
}

impl ExpertMap {
    pub fn in_dim(&self) -> usize {
        match self {
            ExpertMap::Dense(m) => m.cols(),
            ExpertMap::LowRank(m) => m.in_dim(),
            ExpertMap::Banded(m) => m.n(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            ExpertMap::Dense(m) => m.rows(),
            ExpertMap::LowRank(m) => m.out_dim(),
            ExpertMap::Banded(m) => m.n(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ExpertMap::Dense(m) => m.param_count(),
            ExpertMap::LowRank(m) => m.as_matrix().param_count(),
            ExpertMap::Banded(m) => m.param_count(),
        }
    }

    /// Materializes the map as an ordinary matrix.
    pub fn to_dense(&self) -> Matrix {
        match self {
            ExpertMap::Dense(m) => m.clone(),
            ExpertMap::LowRank(m) => m.as_matrix().clone(),
            ExpertMap::Banded(m) => m.densify(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            ExpertMap::Dense(m) => m.apply(x),
            ExpertMap::LowRank(m) => m.apply(x),
            ExpertMap::Banded(m) => m.apply(x),
        }
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            ExpertMap::Dense(m) => m.apply_transpose(x),
            ExpertMap::LowRank(m) => m.as_matrix().apply_transpose(x),
            ExpertMap::Banded(m) => m.apply_transpose(x),
        }
    }

    /// Gradient of the map's output against its stored parameters for
    /// upstream gradient `g` and input `x`, i.e. scale · (g ⊗ x) restricted
    /// to the stored entries, appended to `out` in flat order.
    pub fn push_grad(&self, g: &[f64], x: &[f64], scale: f64, out: &mut Vec<f64>) {
        let dense = match self {
            ExpertMap::Dense(m) => Some(m),
            ExpertMap::LowRank(m) => Some(m.as_matrix()),
            ExpertMap::Banded(_) => None,
        };
        if let Some(m) = dense {
            for r in 0..m.rows() {
                let gr = g[r] * scale;
                for c in 0..m.cols() {
                    out.push(gr * x[c]);
                }
            }
        } else if let ExpertMap::Banded(m) = self {
            let mut scratch = BandedMatrix::zeros(m.n(), m.band()).expect("valid band");
            scratch.add_scaled_outer(g, x, scale);
            out.extend(scratch.flat());
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        match self {
            ExpertMap::Dense(m) => m.data().to_vec(),
            ExpertMap::LowRank(m) => m.as_matrix().data().to_vec(),
            ExpertMap::Banded(m) => m.flat(),
        }
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        match self {
            ExpertMap::Dense(m) => m.data_mut().copy_from_slice(flat),
            ExpertMap::LowRank(m) => m.as_matrix_mut().data_mut().copy_from_slice(flat),
            ExpertMap::Banded(m) => m.set_flat(flat).expect("flat length checked by caller"),
        }
    }
}
