//! Integrated products of second derivatives.
//!
//! For cubic splines the second derivatives are piecewise linear, so their
//! products are piecewise quadratic and Simpson's rule on every interval of
//! the merged knot set is exact.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::family::{CurvatureTable, SplineFamily};
use crate::error::{Error, Result};
use crate::quadrature::simpson;

/// `∫ₛᵗ A″_l(u) B″_m(u) du` for all `l, m`.
pub fn gram_between(
    a: &CurvatureTable,
    b: &CurvatureTable,
    s: f64,
    t: f64,
) -> Result<DMatrix<f64>> {
    let t_max = a.t_max().min(b.t_max());
    if t > t_max + 1e-12 {
        return Err(Error::domain(format!("t = {t} exceeds table range {t_max}")));
    }
    if s < a.t_min().max(b.t_min()) - 1e-12 || s > t {
        return Err(Error::domain(format!("invalid integration range [{s}, {t}]")));
    }
    let mut g = DMatrix::zeros(a.n_funcs(), b.n_funcs());
    if s == t {
        return Ok(g);
    }
    match (a, b) {
        (CurvatureTable::Spline(fa), CurvatureTable::Spline(fb)) => {
            let pts = merged_breaks(&[fa, fb], s, t);
            for w in pts.windows(2) {
                accumulate_simpson(&mut g, a, b, w[0], w[1])?;
            }
        }
        _ => tabulated_gram(&mut g, a, b, s, t)?,
    }
    Ok(g)
}

/// `∫₀ᵗ A″_l B″_m` (lower limit fixed at zero).
pub fn curvature_gram(a: &CurvatureTable, b: &CurvatureTable, t: f64) -> Result<DMatrix<f64>> {
    if t < 0.0 {
        return Err(Error::domain(format!("t = {t} is negative")));
    }
    gram_between(a, b, 0.0, t)
}

fn merged_breaks(families: &[&SplineFamily], s: f64, t: f64) -> Vec<f64> {
    let mut pts = vec![s, t];
    for f in families {
        pts.extend(f.cfg.breakpoints().into_iter().filter(|&k| k > s && k < t));
    }
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (1.0 + x.abs()));
    pts
}

fn accumulate_simpson(
    g: &mut DMatrix<f64>,
    a: &CurvatureTable,
    b: &CurvatureTable,
    lo: f64,
    hi: f64,
) -> Result<()> {
    let mid = 0.5 * (lo + hi);
    let (a0, am, a1) = (a.dd_at(lo)?, a.dd_at(mid)?, a.dd_at(hi)?);
    let (b0, bm, b1) = (b.dd_at(lo)?, b.dd_at(mid)?, b.dd_at(hi)?);
    for l in 0..a0.len() {
        for m in 0..b0.len() {
            g[(l, m)] += simpson(lo, hi, a0[l] * b0[m], am[l] * bm[m], a1[l] * b1[m]);
        }
    }
    Ok(())
}

fn sample_on(table: &CurvatureTable, grid: &[f64]) -> Result<DMatrix<f64>> {
    match table {
        CurvatureTable::Tabulated { grid: g, dd } if g.as_slice() == grid => Ok(dd.clone()),
        CurvatureTable::Tabulated { .. } => {
            Err(Error::argument("tabulated curvature tables must share a common grid"))
        }
        CurvatureTable::Spline(f) => f.eval_matrix(grid, 2),
    }
}

// Composite Simpson over grid-interval pairs, trapezoid for leftovers and the
// partial intervals at either end.
fn tabulated_gram(
    g: &mut DMatrix<f64>,
    a: &CurvatureTable,
    b: &CurvatureTable,
    s: f64,
    t: f64,
) -> Result<()> {
    let grid = match (a, b) {
        (CurvatureTable::Tabulated { grid, .. }, _) | (_, CurvatureTable::Tabulated { grid, .. }) => {
            grid.clone()
        }
        _ => unreachable!("spline pair handled separately"),
    };
    let av = sample_on(a, &grid)?;
    let bv = sample_on(b, &grid)?;
    let inside: Vec<usize> = (0..grid.len()).filter(|&k| grid[k] >= s && grid[k] <= t).collect();
    let add_trap = |g: &mut DMatrix<f64>, x0: f64, x1: f64, a0: &[f64], a1: &[f64], b0: &[f64], b1: &[f64]| {
        let h = 0.5 * (x1 - x0);
        for l in 0..a0.len() {
            for m in 0..b0.len() {
                g[(l, m)] += h * (a0[l] * b0[m] + a1[l] * b1[m]);
            }
        }
    };
    let row = |m: &DMatrix<f64>, k: usize| -> Vec<f64> { m.row(k).iter().copied().collect() };
    if inside.is_empty() {
        let (a0, a1) = (a.dd_at(s)?, a.dd_at(t)?);
        let (b0, b1) = (b.dd_at(s)?, b.dd_at(t)?);
        add_trap(g, s, t, &a0, &a1, &b0, &b1);
        return Ok(());
    }
    let first = inside[0];
    let last = *inside.last().unwrap();
    if grid[first] > s {
        let (a0, b0) = (a.dd_at(s)?, b.dd_at(s)?);
        add_trap(g, s, grid[first], &a0, &row(&av, first), &b0, &row(&bv, first));
    }
    let mut k = first;
    while k + 2 <= last {
        let (x0, x2) = (grid[k], grid[k + 2]);
        let h0 = grid[k + 1] - x0;
        let h1 = x2 - grid[k + 1];
        // Simpson for possibly unequal neighbouring intervals
        let w0 = (h0 + h1) / 6.0 * (2.0 - h1 / h0);
        let w1 = (h0 + h1).powi(3) / (6.0 * h0 * h1);
        let w2 = (h0 + h1) / 6.0 * (2.0 - h0 / h1);
        for l in 0..av.ncols() {
            for m in 0..bv.ncols() {
                g[(l, m)] += w0 * av[(k, l)] * bv[(k, m)]
                    + w1 * av[(k + 1, l)] * bv[(k + 1, m)]
                    + w2 * av[(k + 2, l)] * bv[(k + 2, m)];
            }
        }
        k += 2;
    }
    if k < last {
        add_trap(g, grid[k], grid[last], &row(&av, k), &row(&av, last), &row(&bv, k), &row(&bv, last));
    }
    if grid[last] < t {
        let (a1, b1) = (a.dd_at(t)?, b.dd_at(t)?);
        add_trap(g, grid[last], t, &row(&av, last), &a1, &row(&bv, last), &b1);
    }
    Ok(())
}

/// Curvature Gram blocks for a population family (`A`, e.g. the mean-function
/// basis) and a subject-level family (`B`, orthogonalised splines or
/// eigenfunctions) over `[0, t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureGram {
    pub t: f64,
    pub block_pop: DMatrix<f64>,
    pub block_cross: DMatrix<f64>,
    pub block_subj: DMatrix<f64>,
}

impl CurvatureGram {
    pub fn compute(pop: &CurvatureTable, subj: &CurvatureTable, t: f64) -> Result<Self> {
        Self::between(pop, subj, 0.0, t)
    }

    pub fn between(pop: &CurvatureTable, subj: &CurvatureTable, s: f64, t: f64) -> Result<Self> {
        Ok(Self {
            t,
            block_pop: gram_between(pop, pop, s, t)?,
            block_cross: gram_between(pop, subj, s, t)?,
            block_subj: gram_between(subj, subj, s, t)?,
        })
    }

    /// `βᵀP_Bβ + 2βᵀP_{B,B̃}ζ + ζᵀP_{B̃}ζ`.
    pub fn quadratic_form(&self, beta: &[f64], zeta: &[f64]) -> f64 {
        let b = DVector::from_column_slice(beta);
        let z = DVector::from_column_slice(zeta);
        let mut q = 0.0;
        if !beta.is_empty() {
            q += b.dot(&(&self.block_pop * &b));
        }
        if !beta.is_empty() && !zeta.is_empty() {
            q += 2.0 * b.dot(&(&self.block_cross * &z));
        }
        if !zeta.is_empty() {
            q += z.dot(&(&self.block_subj * &z));
        }
        q
    }
}

/// Second derivatives of a cubic spline family sampled at every knot of the
/// family (plus zero). Between consecutive breakpoints each second derivative
/// is linear, so `∫₀ᵗ (Σ c_j f_j″)²` follows exactly from the breakpoint values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearCurvature {
    pub breaks: Vec<f64>,
    /// `breaks × n_funcs`, row-major for cache-friendly products.
    pub dd: Vec<f64>,
    pub n_funcs: usize,
}

impl PiecewiseLinearCurvature {
    /// Breakpoints from zero to `t_max`, merging the knots of all families;
    /// `dd` columns are the families concatenated in order.
    pub fn new(families: &[&SplineFamily], t_max: f64) -> Result<Self> {
        for f in families {
            if f.cfg.degree != 3 {
                return Err(Error::argument("piecewise-linear curvature needs cubic splines"));
            }
            if f.cfg.lo > 0.0 || f.cfg.hi < t_max {
                return Err(Error::domain("family does not cover [0, t_max]"));
            }
        }
        let breaks = merged_breaks(families, 0.0, t_max);
        let n_funcs: usize = families.iter().map(|f| f.n_funcs()).sum();
        let mut dd = Vec::with_capacity(breaks.len() * n_funcs);
        for &u in &breaks {
            for f in families {
                dd.extend(f.eval(u, 2)?);
            }
        }
        Ok(Self { breaks, dd, n_funcs })
    }

    /// Interval index `j` with `breaks[j] <= t <= breaks[j+1]` and `t - breaks[j]`.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.breaks.len();
        let p = self.breaks.partition_point(|&b| b <= t);
        let j = p.saturating_sub(1).min(n - 2);
        (j, t - self.breaks[j])
    }

    pub fn n_breaks(&self) -> usize {
        self.breaks.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splinecore::bspline::KnotConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mean_table() -> CurvatureTable {
        let cfg = KnotConfig::uniform_cubic(13, -1e-5, 10.0 + 1e-5).unwrap();
        CurvatureTable::Spline(SplineFamily::identity(cfg))
    }

    fn other_table(seed: u64) -> CurvatureTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = KnotConfig::uniform_cubic(20, -1e-5, 10.0 + 1e-5).unwrap();
        let coef = DMatrix::from_fn(20, 4, |_, _| rng.random_range(-1.0..1.0));
        CurvatureTable::Spline(SplineFamily::new(cfg, coef).unwrap())
    }

    fn riemann(table: &CurvatureTable, c: &[f64], t: f64, panels: usize) -> f64 {
        let h = t / panels as f64;
        (0..panels)
            .map(|k| {
                let u = (k as f64 + 0.5) * h;
                let d = table.dd_at(u).unwrap();
                let v: f64 = d.iter().zip(c).map(|(a, b)| a * b).sum();
                v * v * h
            })
            .sum()
    }

    #[test]
    fn zero_length_range_gives_zero_matrix() {
        let a = mean_table();
        let g = curvature_gram(&a, &a, 0.0).unwrap();
        assert_eq!(g.amax(), 0.0);
    }

    #[test]
    fn beyond_table_is_a_domain_error() {
        let a = mean_table();
        assert!(matches!(curvature_gram(&a, &a, 11.0), Err(Error::Domain(_))));
    }

    #[test]
    fn self_gram_is_symmetric_psd() {
        let a = mean_table();
        let g = curvature_gram(&a, &a, 7.3).unwrap();
        assert!((&g - g.transpose()).amax() < 1e-12);
        let ev = g.symmetric_eigen().eigenvalues;
        assert!(ev.min() > -1e-10 * ev.amax());
    }

    #[test]
    fn quadratic_form_matches_fine_riemann_sum() {
        let a = mean_table();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let beta: Vec<f64> = (0..13).map(|_| rng.random_range(-5.0..5.0)).collect();
            let t = rng.random_range(0.5..10.0);
            let g = curvature_gram(&a, &a, t).unwrap();
            let b = DVector::from_vec(beta.clone());
            let q = b.dot(&(&g * &b));
            let r = riemann(&a, &beta, t, 100_000);
            assert!((q - r).abs() <= 1e-6 * r, "q={q} r={r}");
        }
    }

    #[test]
    fn windowed_identity_holds() {
        let a = mean_table();
        let b = other_table(9);
        for t in [0.3, 1.0, 2.7, 9.9] {
            let lo = (t - 1.0f64).max(0.0);
            let diff = curvature_gram(&a, &b, t).unwrap() - curvature_gram(&a, &b, lo).unwrap();
            let direct = gram_between(&a, &b, lo, t).unwrap();
            assert!((diff - direct).amax() < 1e-10);
        }
    }

    #[test]
    fn increments_are_psd() {
        let b = other_table(1);
        let g1 = curvature_gram(&b, &b, 3.0).unwrap();
        let g2 = curvature_gram(&b, &b, 5.5).unwrap();
        let ev = (g2 - g1).symmetric_eigen().eigenvalues;
        assert!(ev.min() > -1e-10);
    }

    #[test]
    fn tabulated_path_approximates_exact_path() {
        let a = mean_table();
        let grid = crate::quadrature::linspace(0.0, 10.0, 401);
        let dd = match &a {
            CurvatureTable::Spline(f) => f.eval_matrix(&grid, 2).unwrap(),
            _ => unreachable!(),
        };
        let tab = CurvatureTable::Tabulated { grid, dd };
        let exact = curvature_gram(&a, &a, 6.13).unwrap();
        let approx = curvature_gram(&tab, &a, 6.13).unwrap();
        assert!((&exact - &approx).amax() <= 1e-3 * exact.amax());
    }

    #[test]
    fn piecewise_linear_profile_reproduces_breakpoint_values() {
        let a = mean_table();
        let f = match &a {
            CurvatureTable::Spline(f) => f,
            _ => unreachable!(),
        };
        let plc = PiecewiseLinearCurvature::new(&[f], 10.0).unwrap();
        assert_eq!(plc.breaks[0], 0.0);
        let t = 4.321;
        let (j, tau) = plc.locate(t);
        let h = plc.breaks[j + 1] - plc.breaks[j];
        let n = plc.n_funcs;
        let d = a.dd_at(t).unwrap();
        for k in 0..n {
            let v = plc.dd[j * n + k] + (plc.dd[(j + 1) * n + k] - plc.dd[j * n + k]) * tau / h;
            assert!((v - d[k]).abs() < 1e-10);
        }
    }
}
