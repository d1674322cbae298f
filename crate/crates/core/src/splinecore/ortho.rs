use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::bspline::KnotConfig;
use super::family::SplineFamily;
use super::penalty::difference_matrix;
use crate::error::{Error, Result};
use crate::quadrature::linspace;

/// Default grid resolution used for the spectral decomposition.
pub const DEFAULT_ORTHO_GRID: usize = 401;
/// Relative eigenvalue threshold for the penalty pseudo-inverse.
pub const PINV_THRESHOLD: f64 = 1e-10;

/// Orthogonalised P-spline basis: an unpenalised null space `{1, t}` and a
/// decorrelated penalised complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoBasis {
    pub grid: Vec<f64>,
    /// `grid × 2`, columns `1` and `t`.
    pub null_design: DMatrix<f64>,
    /// `grid × K` values of the retained orthogonalised functions.
    pub penalized_functions: DMatrix<f64>,
    /// `grid × K` second derivatives of the same functions.
    pub penalized_dd: DMatrix<f64>,
    pub retained_k: usize,
    /// Retained spectrum, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Full positive spectrum, for reporting the retained share.
    pub spectrum: Vec<f64>,
    /// The retained functions as combinations of the raw basis; lets them be
    /// evaluated anywhere in the domain.
    pub family: SplineFamily,
}

impl OrthoBasis {
    /// Share of the positive spectrum carried by the retained functions.
    pub fn explained(&self) -> f64 {
        let total: f64 = self.spectrum.iter().sum();
        self.eigenvalues.iter().sum::<f64>() / total
    }

    /// Largest grid-norm of the projection of any penalised column onto `{1, t}`,
    /// relative to the column's own grid norm.
    pub fn null_space_leakage(&self) -> f64 {
        let x = &self.null_design;
        let xtx = x.transpose() * x;
        let inv = xtx.try_inverse().expect("null design is full rank");
        let mut worst = 0.0f64;
        for k in 0..self.retained_k {
            let col = self.penalized_functions.column(k);
            let coef = &inv * (x.transpose() * col);
            let proj = x * coef;
            worst = worst.max(proj.norm() / col.norm());
        }
        worst
    }

    /// Largest off-diagonal entry of the normalised grid Gram matrix.
    pub fn orthogonality_defect(&self) -> f64 {
        let f = &self.penalized_functions;
        let g = f.transpose() * f;
        let mut worst = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                if i != j {
                    let r = g[(i, j)] / (g[(i, i)] * g[(j, j)]).sqrt();
                    worst = worst.max(r.abs());
                }
            }
        }
        worst
    }
}

fn sym_eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    let norm = m.amax();
    SymmetricEigen::try_new(m, 1e-15, 10_000 * n.max(1)).ok_or_else(|| {
        Error::numeric(format!(
            "symmetric eigendecomposition of {what} ({n}x{n}, max |entry| {norm:e}) did not converge"
        ))
    })
}

/// Eigenpairs sorted by decreasing eigenvalue.
pub(crate) fn sorted_eigen(m: DMatrix<f64>, what: &str) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = sym_eigen(m, what)?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    Ok((vals, vecs))
}

/// Spectral decomposition of `B P⁻ Bᵀ` restricted to the complement of
/// `{1, t}` on a dense grid; keeps the leading functions reaching `pve` of
/// the spectrum.
pub fn build_ortho_basis(cfg: &KnotConfig, grid_size: usize, pve: f64) -> Result<OrthoBasis> {
    let k0 = cfg.n_basis();
    if !(pve > 0.0 && pve <= 1.0) {
        return Err(Error::argument(format!("pve must lie in (0, 1], got {pve}")));
    }
    if k0 < 10 {
        return Err(Error::argument(format!("need at least 10 raw basis functions, got {k0}")));
    }
    if grid_size < 10 * k0 {
        return Err(Error::argument(format!(
            "grid of {grid_size} points is too coarse for {k0} basis functions"
        )));
    }
    let grid = linspace(cfg.lo, cfg.hi, grid_size);
    let raw = SplineFamily::identity(cfg.clone());
    let b = raw.eval_matrix(&grid, 0)?;

    // P^{-1/2} via the eigendecomposition of the RW2 penalty
    let pen = difference_matrix(2, k0)?;
    let (lam, vecs) = sorted_eigen(pen.matrix.clone(), "difference penalty")?;
    let lmax = lam[0];
    let mut p_half_inv = DMatrix::zeros(k0, k0);
    for (i, &l) in lam.iter().enumerate() {
        if l > PINV_THRESHOLD * lmax {
            let v = vecs.column(i);
            p_half_inv += (&v * v.transpose()) / l.sqrt();
        }
    }

    let r = &b * &p_half_inv;
    let x = DMatrix::from_fn(grid_size, 2, |i, j| if j == 0 { 1.0 } else { grid[i] });
    let xtx_inv = (x.transpose() * &x)
        .try_inverse()
        .ok_or_else(|| Error::numeric("null-space design is singular"))?;
    let proj = &xtx_inv * (x.transpose() * &r);
    let qr = &r - &x * &proj;
    let s = qr.transpose() * &qr;
    let (d, w) = sorted_eigen((&s + s.transpose()) * 0.5, "orthogonalisation Gram")?;
    let dmax = d[0];
    if !(dmax > 0.0) || !dmax.is_finite() {
        return Err(Error::numeric(format!("degenerate spectrum, leading eigenvalue {dmax:e}")));
    }
    let spectrum: Vec<f64> = d.iter().copied().take_while(|&v| v > PINV_THRESHOLD * dmax).collect();
    let total: f64 = spectrum.iter().sum();
    let mut retained = spectrum.len();
    let mut acc = 0.0;
    for (i, &v) in spectrum.iter().enumerate() {
        acc += v;
        if acc / total >= pve - 1e-14 {
            retained = i + 1;
            break;
        }
    }

    // coefficients a_k = P^{-1/2} w_k - Xcoef c_k, where the raw basis with
    // Greville coefficients reproduces t exactly
    let greville = cfg.greville();
    let xcoef = DMatrix::from_fn(k0, 2, |i, j| if j == 0 { 1.0 } else { greville[i] });
    let wk = w.columns(0, retained).into_owned();
    let ck = &proj * &wk;
    let mut coef = &p_half_inv * &wk - &xcoef * &ck;

    let mut values = &b * &coef;
    for k in 0..retained {
        // sign: positive weighted integral, falling back to the largest entry
        let sum: f64 = values.column(k).sum();
        let pivot = if sum.abs() > 1e-8 * values.column(k).amax() * grid_size as f64 {
            sum
        } else {
            let col = values.column(k);
            let imax = col.iamax();
            col[imax]
        };
        if pivot < 0.0 {
            coef.column_mut(k).neg_mut();
            values.column_mut(k).neg_mut();
        }
    }
    let family = SplineFamily::new(cfg.clone(), coef)?;
    let dd = family.eval_matrix(&grid, 2)?;
    Ok(OrthoBasis {
        grid,
        null_design: x,
        penalized_functions: values,
        penalized_dd: dd,
        retained_k: retained,
        eigenvalues: spectrum[..retained].to_vec(),
        spectrum,
        family,
    })
}
