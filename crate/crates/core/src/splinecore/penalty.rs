use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ridge added to the random-walk penalty to make it full rank.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Difference penalty `DᵀD` together with the difference operator `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyMatrix {
    pub order: usize,
    pub dim: usize,
    pub difference: DMatrix<f64>,
    pub matrix: DMatrix<f64>,
    pub ridge: f64,
}

impl PenaltyMatrix {
    /// `DᵀD + ridge·I`.
    pub fn regularized(&self) -> DMatrix<f64> {
        self.regularized_with(self.ridge)
    }

    pub fn regularized_with(&self, ridge: f64) -> DMatrix<f64> {
        &self.matrix + DMatrix::identity(self.dim, self.dim) * ridge
    }
}

/// Banded `(dim - order) × dim` difference operator and its penalty.
pub fn difference_matrix(order: usize, dim: usize) -> Result<PenaltyMatrix> {
    if dim <= order {
        return Err(Error::argument(format!(
            "difference order {order} needs dimension > {order}, got {dim}"
        )));
    }
    let coeffs = binomial_signs(order);
    let rows = dim - order;
    let mut d = DMatrix::zeros(rows, dim);
    for r in 0..rows {
        for (k, &c) in coeffs.iter().enumerate() {
            d[(r, r + k)] = c;
        }
    }
    let matrix = d.transpose() * &d;
    Ok(PenaltyMatrix { order, dim, difference: d, matrix, ridge: DEFAULT_RIDGE })
}

// (-1)^(order-k) * C(order, k), k = 0..=order
fn binomial_signs(order: usize) -> Vec<f64> {
    let mut c = vec![1.0];
    for _ in 0..order {
        let mut next = vec![0.0; c.len() + 1];
        for (i, &v) in c.iter().enumerate() {
            next[i] -= v;
            next[i + 1] += v;
        }
        c = next;
    }
    c
}
