use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Knot layout of a B-spline basis on `[lo, hi]` with
/// `interior.len() + degree + 1` functions.
///
/// By default the boundaries are clamped (repeated `degree + 1` times). With
/// `extended` the knot vector instead continues past each boundary with the
/// spacing of the adjacent interval, so that on equally spaced knots every
/// function has the same shape and the second derivative at a knot is the
/// scaled second difference of the coefficients (the P-spline layout).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotConfig {
    pub degree: usize,
    pub interior: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub extended: bool,
}

/// Relative padding applied to a data range when choosing boundary knots.
pub const BOUNDARY_PADDING: f64 = 1e-6;

impl KnotConfig {
    pub fn new(degree: usize, interior: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::argument(format!("invalid boundary [{lo}, {hi}]")));
        }
        if degree == 0 {
            return Err(Error::argument("degree must be at least 1"));
        }
        for w in interior.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::argument("interior knots must be strictly increasing"));
            }
        }
        if let (Some(&first), Some(&last)) = (interior.first(), interior.last()) {
            if !(first > lo && last < hi) {
                return Err(Error::argument(format!(
                    "interior knots must lie strictly inside ({lo}, {hi})"
                )));
            }
        }
        Ok(Self { degree, interior, lo, hi, extended: false })
    }

    /// Same knots with the boundary continued rather than clamped.
    pub fn with_extended_boundary(mut self) -> Self {
        self.extended = true;
        self
    }

    /// Cubic basis with `n_basis` functions and equally spaced interior knots.
    pub fn uniform_cubic(n_basis: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::uniform(3, n_basis, lo, hi)
    }

    pub fn uniform(degree: usize, n_basis: usize, lo: f64, hi: f64) -> Result<Self> {
        if n_basis < degree + 1 {
            return Err(Error::argument(format!(
                "need at least {} basis functions for degree {degree}",
                degree + 1
            )));
        }
        let n_int = n_basis - degree - 1;
        let h = (hi - lo) / (n_int + 1) as f64;
        let interior = (1..=n_int).map(|i| lo + h * i as f64).collect();
        Self::new(degree, interior, lo, hi)
    }

    /// Boundary `[lo, hi]` covering `[min, max]` with the default relative padding.
    pub fn padded_range(min: f64, max: f64) -> (f64, f64) {
        let pad = BOUNDARY_PADDING * (max - min).abs().max(1.0);
        (min - pad, max + pad)
    }

    pub fn n_basis(&self) -> usize {
        self.interior.len() + self.degree + 1
    }

    pub fn knot_vector(&self) -> Vec<f64> {
        let p = self.degree;
        let mut k = Vec::with_capacity(self.interior.len() + 2 * (p + 1));
        if self.extended {
            let h_lo = self.interior.first().map_or(self.hi - self.lo, |f| f - self.lo);
            let h_hi = self.interior.last().map_or(self.hi - self.lo, |l| self.hi - l);
            k.extend((0..=p).rev().map(|j| self.lo - h_lo * j as f64));
            k.extend_from_slice(&self.interior);
            k.extend((0..=p).map(|j| self.hi + h_hi * j as f64));
        } else {
            k.extend(std::iter::repeat_n(self.lo, p + 1));
            k.extend_from_slice(&self.interior);
            k.extend(std::iter::repeat_n(self.hi, p + 1));
        }
        k
    }

    /// Distinct knot locations including both boundaries.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.interior.len() + 2);
        b.push(self.lo);
        b.extend_from_slice(&self.interior);
        b.push(self.hi);
        b
    }

    /// Greville abscissae; coefficients equal to these reproduce `t` exactly.
    pub fn greville(&self) -> Vec<f64> {
        let k = self.knot_vector();
        let p = self.degree;
        (0..self.n_basis())
            .map(|j| k[j + 1..=j + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && t <= self.hi
    }

    fn span(&self, knots: &[f64], t: f64) -> usize {
        let n = self.n_basis();
        let p = self.degree;
        if t >= knots[n] {
            return n - 1;
        }
        // knots[p] <= t < knots[n]
        let (mut low, mut high) = (p, n);
        while high - low > 1 {
            let mid = (low + high) / 2;
            if t < knots[mid] {
                high = mid;
            } else {
                low = mid;
            }
        }
        low
    }

    /// Nonzero basis values (or derivatives) at `t`: returns the index of the
    /// first nonzero function and `degree + 1` values.
    pub fn eval_nonzero(&self, t: f64, deriv: usize) -> Result<(usize, Vec<f64>)> {
        if !self.contains(t) || !t.is_finite() {
            return Err(Error::domain(format!(
                "t = {t} outside basis boundary [{}, {}]",
                self.lo, self.hi
            )));
        }
        if deriv > self.degree {
            return Err(Error::argument(format!(
                "derivative order {deriv} exceeds degree {}",
                self.degree
            )));
        }
        let knots = self.knot_vector();
        let span = self.span(&knots, t);
        let ders = ders_basis_funs(&knots, span, t, self.degree, deriv);
        Ok((span - self.degree, ders[deriv].clone()))
    }

    /// Dense vector of all basis values (or `deriv`-th derivatives) at `t`.
    pub fn eval_basis(&self, t: f64, deriv: usize) -> Result<Vec<f64>> {
        let (first, vals) = self.eval_nonzero(t, deriv)?;
        let mut out = vec![0.0; self.n_basis()];
        out[first..first + vals.len()].copy_from_slice(&vals);
        Ok(out)
    }

    /// Basis values and their first `max_deriv` derivatives, densely.
    pub fn eval_basis_all(&self, t: f64, max_deriv: usize) -> Result<Vec<Vec<f64>>> {
        if !self.contains(t) || !t.is_finite() {
            return Err(Error::domain(format!(
                "t = {t} outside basis boundary [{}, {}]",
                self.lo, self.hi
            )));
        }
        if max_deriv > self.degree {
            return Err(Error::argument("derivative order exceeds degree"));
        }
        let knots = self.knot_vector();
        let span = self.span(&knots, t);
        let ders = ders_basis_funs(&knots, span, t, self.degree, max_deriv);
        let first = span - self.degree;
        Ok(ders
            .into_iter()
            .map(|d| {
                let mut out = vec![0.0; self.n_basis()];
                out[first..first + d.len()].copy_from_slice(&d);
                out
            })
            .collect())
    }
}

/// Free-function form of [`KnotConfig::eval_basis`].
pub fn eval_basis(cfg: &KnotConfig, t: f64, deriv: usize) -> Result<Vec<f64>> {
    cfg.eval_basis(t, deriv)
}

// Nonzero basis functions and derivatives on `span` (Piegl & Tiller A2.3).
fn ders_basis_funs(knots: &[f64], span: usize, u: f64, p: usize, n: usize) -> Vec<Vec<f64>> {
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = vec![vec![0.0; p + 1]; n + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = vec![vec![0.0; p + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=n {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                let rk = rk as usize;
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                d = a[s2][0] * ndu[rk][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut fac = p as f64;
    for k in 1..=n {
        for v in ders[k].iter_mut() {
            *v *= fac;
        }
        fac *= (p - k) as f64;
    }
    ders
}
