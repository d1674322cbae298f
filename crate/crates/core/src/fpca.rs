//! Preliminary functional principal component analysis of sparse longitudinal
//! data: pooled P-spline mean, tensor P-spline smoothing of off-diagonal
//! cross-products, and a trapezoid-weighted eigendecomposition.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{LongitudinalRecord, SubjectId};
use crate::error::{Error, Result};
use crate::quadrature::{linspace, trapezoid_weights};
use crate::splinecore::{difference_matrix, sorted_eigen, KnotConfig, SplineFamily};

/// Default number of grid points per axis of the covariance surface.
pub const DEFAULT_COV_GRID: usize = 51;

/// log10 smoothing parameters searched by generalized cross-validation.
fn lambda_grid() -> impl Iterator<Item = f64> {
    (0..=64).map(|i| 10f64.powf(-8.0 + 0.25 * i as f64))
}

/// Penalized least-squares fit selected by GCV from sufficient statistics
/// `XᵀX`, `Xᵀy`, `yᵀy`.
struct PenalizedFit {
    coef: DVector<f64>,
    lambda: f64,
    edf: f64,
    rss: f64,
}

fn gcv_fit(xtx: &DMatrix<f64>, xty: &DVector<f64>, yty: f64, n: usize, penalty: &DMatrix<f64>) -> Result<PenalizedFit> {
    let dim = xtx.nrows();
    let mut best: Option<(f64, PenalizedFit)> = None;
    for lambda in lambda_grid() {
        let a = xtx + penalty * lambda + DMatrix::identity(dim, dim) * 1e-10;
        let Some(ch) = Cholesky::new(a) else { continue };
        let coef = ch.solve(xty);
        let rss = (yty - 2.0 * coef.dot(xty) + coef.dot(&(xtx * &coef))).max(0.0);
        let edf = ch.solve(xtx).trace();
        let denom = n as f64 - edf;
        if denom <= 0.0 {
            continue;
        }
        let gcv = n as f64 * rss / (denom * denom);
        if best.as_ref().is_none_or(|(g, _)| gcv < *g) {
            best = Some((gcv, PenalizedFit { coef, lambda, edf, rss }));
        }
    }
    best.map(|(_, f)| f)
        .ok_or_else(|| Error::numeric("penalized fit failed for every smoothing parameter"))
}

/// Pooled P-spline estimate of the population mean function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFit {
    pub cfg: KnotConfig,
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub edf: f64,
    pub residual_variance: f64,
}

impl MeanFit {
    pub fn eval(&self, t: f64) -> Result<f64> {
        let (first, vals) = self.cfg.eval_nonzero(t, 0)?;
        Ok(vals.iter().enumerate().map(|(k, v)| v * self.coef[first + k]).sum())
    }
}

/// Second-order difference penalty plus ridge-free normal equations for a
/// pooled penalized-spline mean, smoothing parameter chosen by GCV.
pub fn estimate_mean(data: &[LongitudinalRecord], cfg: &KnotConfig) -> Result<MeanFit> {
    let n_subj = data.iter().map(|r| r.subject).collect::<std::collections::HashSet<_>>().len();
    if data.len() < 10 || n_subj < 2 {
        return Err(Error::data(format!(
            "mean estimation needs at least 10 observations from 2 subjects, got {} from {n_subj}",
            data.len()
        )));
    }
    let nb = cfg.n_basis();
    let mut xtx = DMatrix::zeros(nb, nb);
    let mut xty = DVector::zeros(nb);
    let mut yty = 0.0;
    for r in data {
        let (first, vals) = cfg.eval_nonzero(r.time, 0)?;
        for (a, va) in vals.iter().enumerate() {
            xty[first + a] += va * r.value;
            for (b, vb) in vals.iter().enumerate() {
                xtx[(first + a, first + b)] += va * vb;
            }
        }
        yty += r.value * r.value;
    }
    let penalty = difference_matrix(2, nb)?.matrix;
    let fit = gcv_fit(&xtx, &xty, yty, data.len(), &penalty)?;
    Ok(MeanFit {
        cfg: cfg.clone(),
        coef: fit.coef.iter().copied().collect(),
        lambda: fit.lambda,
        edf: fit.edf,
        residual_variance: fit.rss / (data.len() as f64 - fit.edf),
    })
}

/// Subtracts the fitted mean from every record.
pub fn center(data: &[LongitudinalRecord], mean: &MeanFit) -> Result<Vec<LongitudinalRecord>> {
    data.iter()
        .map(|r| Ok(LongitudinalRecord { value: r.value - mean.eval(r.time)?, ..r.clone() }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSurface {
    pub grid: Vec<f64>,
    pub values: DMatrix<f64>,
    pub smoothing_penalty: f64,
    /// Tensor-spline coefficients (symmetrized), `σ(s,t) = B(s)ᵀ Θ B(t)`.
    pub cfg: KnotConfig,
    pub theta: DMatrix<f64>,
}

/// Tensor-product P-spline smooth of the off-diagonal cross-products
/// `y_ij y_ik` (`j ≠ k`) of centered data, evaluated on `grid`.
pub fn smooth_covariance(centered: &[LongitudinalRecord], grid: &[f64], cfg: &KnotConfig) -> Result<CovarianceSurface> {
    let mut by_subject: BTreeMap<SubjectId, Vec<&LongitudinalRecord>> = BTreeMap::new();
    for r in centered {
        by_subject.entry(r.subject).or_default().push(r);
    }
    if by_subject.values().all(|v| v.len() < 2) {
        return Err(Error::data("covariance smoothing needs a subject with at least two observations"));
    }
    let nb = cfg.n_basis();
    let dim = nb * nb;
    let mut xtx = DMatrix::zeros(dim, dim);
    let mut xty = DVector::zeros(dim);
    let mut yty = 0.0;
    let mut n_pairs = 0usize;
    let mut idx = Vec::with_capacity(16);
    let mut val = Vec::with_capacity(16);
    for recs in by_subject.values() {
        let evals = recs
            .iter()
            .map(|r| cfg.eval_nonzero(r.time, 0))
            .collect::<Result<Vec<_>>>()?;
        for (j, rj) in recs.iter().enumerate() {
            for (k, rk) in recs.iter().enumerate() {
                if j == k {
                    continue;
                }
                let y = rj.value * rk.value;
                idx.clear();
                val.clear();
                let (fj, vj) = &evals[j];
                let (fk, vk) = &evals[k];
                for (a, va) in vj.iter().enumerate() {
                    for (b, vb) in vk.iter().enumerate() {
                        idx.push((fj + a) * nb + fk + b);
                        val.push(va * vb);
                    }
                }
                for (p, &ip) in idx.iter().enumerate() {
                    xty[ip] += val[p] * y;
                    for (q, &iq) in idx.iter().enumerate() {
                        xtx[(ip, iq)] += val[p] * val[q];
                    }
                }
                yty += y * y;
                n_pairs += 1;
            }
        }
    }
    let p1 = difference_matrix(2, nb)?.matrix;
    let eye = DMatrix::<f64>::identity(nb, nb);
    let penalty = p1.kronecker(&eye) + eye.kronecker(&p1);
    let fit = gcv_fit(&xtx, &xty, yty, n_pairs, &penalty)?;
    // coefficient index a*nb + b pairs basis a in s with basis b in t
    let theta = DMatrix::from_fn(nb, nb, |a, b| fit.coef[a * nb + b]);
    let theta = (&theta + theta.transpose()) * 0.5;
    let basis = SplineFamily::identity(cfg.clone()).eval_matrix(grid, 0)?;
    let values = &basis * &theta * basis.transpose();
    let values = (&values + values.transpose()) * 0.5;
    Ok(CovarianceSurface { grid: grid.to_vec(), values, smoothing_penalty: fit.lambda, cfg: cfg.clone(), theta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    pub grid: Vec<f64>,
    /// `grid × L`, unit norm under the trapezoid weights.
    pub eigenfunctions: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub quadrature_weights: Vec<f64>,
    pub pve_achieved: f64,
}

impl EigenSystem {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `max |∫ψ_lψ_m − δ_lm|` under the trapezoid weights.
    pub fn orthonormality_defect(&self) -> f64 {
        let l = self.n_components();
        let mut worst: f64 = 0.0;
        for a in 0..l {
            for b in 0..l {
                let ip: f64 = (0..self.grid.len())
                    .map(|g| self.quadrature_weights[g] * self.eigenfunctions[(g, a)] * self.eigenfunctions[(g, b)])
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((ip - target).abs());
            }
        }
        worst
    }

    /// `Σ_l λ_l ψ_l(s) ψ_l(t)` on the grid.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&self.eigenvalues));
        &self.eigenfunctions * lam * self.eigenfunctions.transpose()
    }

    /// Least-squares re-expansion of the tabulated eigenfunctions on a cubic
    /// basis, so that their curvature can be evaluated analytically.
    pub fn to_spline(&self, cfg: &KnotConfig) -> Result<SplineFamily> {
        let x = SplineFamily::identity(cfg.clone()).eval_matrix(&self.grid, 0)?;
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &self.eigenfunctions;
        let ch = Cholesky::new(xtx)
            .ok_or_else(|| Error::numeric("eigenfunction re-expansion: basis not identified on grid"))?;
        SplineFamily::new(cfg.clone(), ch.solve(&xty))
    }
}

/// Eigendecomposition of `W^{1/2} Σ W^{1/2}` with trapezoid weights `W`;
/// keeps the smallest number of positive components reaching `pve`.
pub fn eigendecompose(surface: &CovarianceSurface, pve: f64) -> Result<EigenSystem> {
    if !(pve > 0.0 && pve <= 1.0) {
        return Err(Error::argument(format!("pve must be in (0, 1], got {pve}")));
    }
    if surface.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("covariance surface has non-finite entries"));
    }
    let g = surface.grid.len();
    let w = trapezoid_weights(&surface.grid);
    let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let m = DMatrix::from_fn(g, g, |a, b| sw[a] * surface.values[(a, b)] * sw[b]);
    let (vals, vecs) = sorted_eigen(m, "weighted covariance surface")?;
    let positive: Vec<usize> = (0..g).filter(|&i| vals[i] > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::numeric("covariance surface has no positive eigenvalue"));
    }
    let total: f64 = positive.iter().map(|&i| vals[i]).sum();
    let mut l = 0;
    let mut acc = 0.0;
    for &i in &positive {
        acc += vals[i];
        l += 1;
        if acc / total >= pve * (1.0 - 1e-12) {
            break;
        }
    }
    let mut psi = DMatrix::zeros(g, l);
    for c in 0..l {
        let v = vecs.column(positive[c]);
        let mut col: Vec<f64> = (0..g).map(|a| v[a] / sw[a]).collect();
        let integral: f64 = col.iter().zip(&w).map(|(p, wi)| p * wi).sum();
        if integral < 0.0 {
            col.iter_mut().for_each(|p| *p = -*p);
        }
        for a in 0..g {
            psi[(a, c)] = col[a];
        }
    }
    Ok(EigenSystem {
        grid: surface.grid.clone(),
        eigenfunctions: psi,
        eigenvalues: positive[..l].iter().map(|&i| vals[i]).collect(),
        quadrature_weights: w,
        pve_achieved: acc / total,
    })
}

/// Full preliminary step: mean, covariance smooth on a `grid_size` grid over
/// the basis domain, eigendecomposition, and re-expansion on the mean basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaFit {
    pub mean: MeanFit,
    pub surface: CovarianceSurface,
    pub eigen: EigenSystem,
    pub eigen_family: SplineFamily,
}

pub fn run_fpca(data: &[LongitudinalRecord], cfg: &KnotConfig, grid_size: usize, pve: f64) -> Result<FpcaFit> {
    let mean = estimate_mean(data, cfg)?;
    let centered = center(data, &mean)?;
    let grid = linspace(cfg.lo, cfg.hi, grid_size);
    let surface = smooth_covariance(&centered, &grid, cfg)?;
    let eigen = eigendecompose(&surface, pve)?;
    let eigen_family = eigen.to_spline(cfg)?;
    Ok(FpcaFit { mean, surface, eigen, eigen_family })
}
