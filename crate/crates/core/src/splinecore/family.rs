use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::bspline::KnotConfig;
use crate::error::{Error, Result};

/// Functions expressed in one B-spline basis: `f_j(t) = Σ_k coef[k, j] B_k(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFamily {
    pub cfg: KnotConfig,
    pub coef: DMatrix<f64>,
}

impl SplineFamily {
    pub fn new(cfg: KnotConfig, coef: DMatrix<f64>) -> Result<Self> {
        if coef.nrows() != cfg.n_basis() {
            return Err(Error::argument(format!(
                "coefficient rows {} do not match basis size {}",
                coef.nrows(),
                cfg.n_basis()
            )));
        }
        Ok(Self { cfg, coef })
    }

    /// The raw B-spline basis itself.
    pub fn identity(cfg: KnotConfig) -> Self {
        let n = cfg.n_basis();
        Self { cfg, coef: DMatrix::identity(n, n) }
    }

    pub fn n_funcs(&self) -> usize {
        self.coef.ncols()
    }

    pub fn eval(&self, t: f64, deriv: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_funcs()];
        self.eval_into(t, deriv, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, deriv: usize, out: &mut [f64]) -> Result<()> {
        let (first, vals) = self.cfg.eval_nonzero(t, deriv)?;
        for (j, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (k, v) in vals.iter().enumerate() {
                s += v * self.coef[(first + k, j)];
            }
            *o = s;
        }
        Ok(())
    }

    /// Values of all functions at each point, `points × n_funcs`.
    pub fn eval_matrix(&self, points: &[f64], deriv: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(points.len(), self.n_funcs());
        let mut row = vec![0.0; self.n_funcs()];
        for (i, &t) in points.iter().enumerate() {
            self.eval_into(t, deriv, &mut row)?;
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }
}

/// Second derivatives of a set of functions, either analytic (spline) or
/// sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CurvatureTable {
    Spline(SplineFamily),
    Tabulated { grid: Vec<f64>, dd: DMatrix<f64> },
}

impl CurvatureTable {
    pub fn n_funcs(&self) -> usize {
        match self {
            CurvatureTable::Spline(f) => f.n_funcs(),
            CurvatureTable::Tabulated { dd, .. } => dd.ncols(),
        }
    }

    /// Upper end of the range on which second derivatives are available.
    pub fn t_max(&self) -> f64 {
        match self {
            CurvatureTable::Spline(f) => f.cfg.hi,
            CurvatureTable::Tabulated { grid, .. } => *grid.last().unwrap_or(&f64::NEG_INFINITY),
        }
    }

    pub fn t_min(&self) -> f64 {
        match self {
            CurvatureTable::Spline(f) => f.cfg.lo,
            CurvatureTable::Tabulated { grid, .. } => *grid.first().unwrap_or(&f64::INFINITY),
        }
    }

    /// Second derivatives at `t`; tabulated tables interpolate linearly.
    pub fn dd_at(&self, t: f64) -> Result<Vec<f64>> {
        match self {
            CurvatureTable::Spline(f) => f.eval(t, 2),
            CurvatureTable::Tabulated { grid, dd } => {
                if t < grid[0] || t > grid[grid.len() - 1] {
                    return Err(Error::domain(format!("t = {t} outside tabulated grid")));
                }
                let k = match grid.partition_point(|&g| g <= t) {
                    0 => 0,
                    p if p >= grid.len() => grid.len() - 2,
                    p => p - 1,
                };
                let w = (t - grid[k]) / (grid[k + 1] - grid[k]);
                Ok((0..dd.ncols())
                    .map(|j| (1.0 - w) * dd[(k, j)] + w * dd[(k + 1, j)])
                    .collect())
            }
        }
    }
}

impl From<SplineFamily> for CurvatureTable {
    fn from(f: SplineFamily) -> Self {
        CurvatureTable::Spline(f)
    }
}
