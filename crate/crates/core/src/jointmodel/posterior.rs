//! Log posterior of the joint model on the unconstrained scale with an exact
//! gradient, evaluated from per-subject design caches.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::hazard::HazardKind;
use super::likelihood::rw2_precision;
use super::params::{JointModel, Layout, ParameterVector};
use super::smre::{apply_smre_constraint, SmreOutcome};
use crate::data::{Dataset, Subject};
use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::splinecore::PiecewiseLinearCurvature;
use crate::trajectory::{Representation, Variant, WivKind};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Quantities fixed by the data for one subject.
#[derive(Debug, Clone)]
struct SubjectCache {
    w_long: Vec<f64>,
    w_surv: Vec<f64>,
    y: Vec<f64>,
    /// Observation design rows, `n_obs × pop_row` and `n_obs × subj_row`.
    obs_pop: Vec<f64>,
    obs_subj: Vec<f64>,
    /// Survival evaluation points: quadrature nodes, then the event time if any.
    pts: Vec<SurvPoint>,
    pt_pop: Vec<f64>,
    pt_subj: Vec<f64>,
    /// Last curvature breakpoint index any point needs.
    last_break: usize,
}

#[derive(Debug, Clone)]
struct SurvPoint {
    /// Quadrature weight; zero marks the event-time point.
    weight: f64,
    log_t: f64,
    /// Nonzero log-hazard spline basis values.
    h0_first: usize,
    h0_vals: [f64; 4],
    /// Curvature interval and offset at `t` and at the window's lower limit.
    loc: (usize, f64),
    loc_lo: (usize, f64),
}

struct Rw2 {
    range: std::ops::Range<usize>,
    precision: DMatrix<f64>,
    logdet: f64,
}

/// Scratch buffers reused across subjects within one evaluation.
struct Scratch {
    b: Vec<f64>,
    gb: Vec<f64>,
    c: Vec<f64>,
    gc: Vec<f64>,
    d: Vec<f64>,
    gd: Vec<f64>,
    cum_w: Vec<f64>,
    sd: Vec<f64>,
}

pub struct Posterior {
    pub model: JointModel,
    pub layout: Layout,
    subjects: Vec<SubjectCache>,
    curv: PiecewiseLinearCurvature,
    rw2: Option<Rw2>,
    pop_row: usize,
    subj_row: usize,
    /// Multiplies each subject's survival log-likelihood (1 by default).
    pub survival_weights: Vec<f64>,
    /// Total event count and exposure, used for initial values.
    crude_rate: f64,
    pooled_var: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Posterior {
    pub fn new(model: JointModel, data: &Dataset) -> Result<Self> {
        model.hazard.validate()?;
        if data.n_long_covariates() != model.n_long_cov || data.n_surv_covariates() != model.n_surv_cov {
            return Err(Error::argument("covariate counts in the data do not match the model"));
        }
        if model.noncentered.len() != model.trajectory.subj_dim() {
            return Err(Error::argument("parameterisation flags do not match the subject layout"));
        }
        let subjects = data.subjects();
        if subjects.is_empty() {
            return Err(Error::data("dataset has no subjects"));
        }
        let t_max = data.max_time();
        let curv = model.trajectory.piecewise_curvature(t_max)?;
        let layout = model.layout(subjects.len());
        let rw2 = match rw2_precision(&model)? {
            None => None,
            Some((range, precision)) => {
                let ch = precision
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::numeric("RW2 precision is not positive definite"))?;
                let logdet = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                Some(Rw2 { range, precision, logdet })
            }
        };
        let (pop_row, subj_row) = match model.representation() {
            Representation::Smre => (model.trajectory.pop_dim(), 2),
            _ => (model.trajectory.pop_dim(), model.trajectory.subj_dim()),
        };
        let gl = GaussLegendre::new(model.hazard.quadrature_nodes);
        let mut caches = Vec::with_capacity(subjects.len());
        let (mut events, mut exposure) = (0.0, 0.0);
        for s in &subjects {
            caches.push(Self::cache_subject(&model, &curv, &gl, s, pop_row, subj_row)?);
            events += f64::from(u8::from(s.event));
            exposure += s.exit - s.entry;
        }
        let ys: Vec<f64> = subjects.iter().flat_map(|s| s.values.iter().copied()).collect();
        let ny = ys.len().max(1) as f64;
        let ybar = ys.iter().sum::<f64>() / ny;
        let pooled_var = ys.iter().map(|y| (y - ybar).powi(2)).sum::<f64>() / ny;
        let n = subjects.len();
        Ok(Self {
            model,
            layout,
            subjects: caches,
            curv,
            rw2,
            pop_row,
            subj_row,
            survival_weights: vec![1.0; n],
            crude_rate: (events.max(0.5)) / exposure.max(1e-8),
            pooled_var: pooled_var.max(1e-6),
        })
    }

    fn design_rows(model: &JointModel, t: f64, pop: &mut Vec<f64>, subj: &mut Vec<f64>) -> Result<()> {
        match &model.trajectory.variant {
            Variant::RSpline { basis } => {
                let b = basis.eval(t, 0)?;
                pop.extend(&b);
                subj.extend(b);
            }
            Variant::PSpline { mean, ortho } => {
                pop.extend(mean.eval(t, 0)?);
                subj.extend([1.0, t]);
                subj.extend(ortho.eval(t, 0)?);
            }
            Variant::Fpca { mean, eigen, .. } => {
                pop.extend(mean.eval(t, 0)?);
                subj.extend(eigen.eval(t, 0)?);
            }
            Variant::Smre { mean } => {
                pop.extend([1.0, t]);
                pop.extend(mean.eval(t, 0)?);
                subj.extend([1.0, t]);
            }
        }
        Ok(())
    }

    fn cache_subject(
        model: &JointModel,
        curv: &PiecewiseLinearCurvature,
        gl: &GaussLegendre,
        s: &Subject,
        pop_row: usize,
        subj_row: usize,
    ) -> Result<SubjectCache> {
        let mut obs_pop = Vec::with_capacity(s.times.len() * pop_row);
        let mut obs_subj = Vec::with_capacity(s.times.len() * subj_row);
        for &t in &s.times {
            Self::design_rows(model, t, &mut obs_pop, &mut obs_subj)?;
        }
        let mut times: Vec<(f64, f64)> = if s.exit > s.entry { gl.on_interval(s.entry, s.exit).collect() } else { vec![] };
        if s.event {
            times.push((s.exit, 0.0));
        }
        let mut pts = Vec::with_capacity(times.len());
        let mut pt_pop = Vec::new();
        let mut pt_subj = Vec::new();
        let mut last_break = 0;
        for (t, w) in times {
            Self::design_rows(model, t, &mut pt_pop, &mut pt_subj)?;
            let (h0_first, h0_vals) = match &model.hazard.kind {
                HazardKind::Weibull => (0, [0.0; 4]),
                HazardKind::SplineLogHazard { cfg } => {
                    if cfg.degree != 3 {
                        return Err(Error::argument("log-hazard spline must be cubic"));
                    }
                    let (f, v) = cfg.eval_nonzero(t, 0)?;
                    (f, [v[0], v[1], v[2], v[3]])
                }
            };
            let loc = curv.locate(t);
            let loc_lo = curv.locate(model.wiv.lower(t));
            last_break = last_break.max(loc.0 + 1);
            pts.push(SurvPoint { weight: w, log_t: t.ln(), h0_first, h0_vals, loc, loc_lo });
        }
        Ok(SubjectCache {
            w_long: s.w_long.clone(),
            w_surv: s.w_surv.clone(),
            y: s.values.clone(),
            obs_pop,
            obs_subj,
            pts,
            pt_pop,
            pt_subj,
            last_break,
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// `μ` at one design row, with its gradient scaled by `g` added to `gpop`/`gb`.
    #[inline]
    fn mu(&self, prow: &[f64], srow: &[f64], pop: &[f64], b: &[f64]) -> f64 {
        match self.model.representation() {
            Representation::Smre => {
                pop[0] + b[0] + (pop[1] + b[1]) * prow[1] + b[2] * dot(&prow[2..], &pop[2..])
            }
            _ => dot(prow, pop) + dot(srow, b),
        }
    }

    #[inline]
    fn mu_grad(&self, prow: &[f64], srow: &[f64], pop: &[f64], b: &[f64], g: f64, gpop: &mut [f64], gb: &mut [f64]) {
        match self.model.representation() {
            Representation::Smre => {
                let t = prow[1];
                gpop[0] += g;
                gpop[1] += g * t;
                for k in 2..pop.len() {
                    gpop[k] += g * b[2] * prow[k];
                }
                gb[0] += g;
                gb[1] += g * t;
                gb[2] += g * dot(&prow[2..], &pop[2..]);
            }
            _ => {
                for (gp, r) in gpop.iter_mut().zip(prow) {
                    *gp += g * r;
                }
                for (gs, r) in gb.iter_mut().zip(srow) {
                    *gs += g * r;
                }
            }
        }
    }

    fn curvature_coeffs(&self, pop: &[f64], b: &[f64], c: &mut [f64]) {
        match self.model.representation() {
            Representation::Rspline => {
                for k in 0..c.len() {
                    c[k] = pop[k] + b[k];
                }
            }
            Representation::Pspline => {
                let m = pop.len();
                c[..m].copy_from_slice(pop);
                c[m..].copy_from_slice(&b[2..]);
            }
            Representation::Fpca => {
                let m = pop.len();
                c[..m].copy_from_slice(pop);
                c[m..].copy_from_slice(b);
            }
            Representation::Smre => {
                for k in 0..c.len() {
                    c[k] = b[2] * pop[2 + k];
                }
            }
        }
    }

    fn curvature_coeffs_adjoint(&self, pop: &[f64], b: &[f64], gc: &[f64], gpop: &mut [f64], gb: &mut [f64]) {
        match self.model.representation() {
            Representation::Rspline => {
                for k in 0..gc.len() {
                    gpop[k] += gc[k];
                    gb[k] += gc[k];
                }
            }
            Representation::Pspline => {
                let m = pop.len();
                for k in 0..m {
                    gpop[k] += gc[k];
                }
                for k in m..gc.len() {
                    gb[2 + k - m] += gc[k];
                }
            }
            Representation::Fpca => {
                let m = pop.len();
                for k in 0..m {
                    gpop[k] += gc[k];
                }
                for k in m..gc.len() {
                    gb[k - m] += gc[k];
                }
            }
            Representation::Smre => {
                for k in 0..gc.len() {
                    gpop[2 + k] += gc[k] * b[2];
                    gb[2] += gc[k] * pop[2 + k];
                }
            }
        }
    }

    /// `∫₀ᵗ (μ″)²` at location `(j, τ)` given breakpoint values `d` and prefix
    /// integrals `cum_w`.
    #[inline]
    fn cumulative_at(&self, d: &[f64], cum: &[f64], (j, tau): (usize, f64)) -> f64 {
        let h = self.curv.breaks[j + 1] - self.curv.breaks[j];
        let dt = d[j] + (d[j + 1] - d[j]) * tau / h;
        cum[j] + tau / 3.0 * (d[j] * d[j] + d[j] * dt + dt * dt)
    }

    /// Adds `g · ∂(∫₀ᵗ μ″²)/∂d` for the partial last interval; the full
    /// intervals are handled through `suffix` weights.
    #[inline]
    fn cumulative_partial_adjoint(&self, d: &[f64], gd: &mut [f64], (j, tau): (usize, f64), g: f64, suffix: &mut [f64]) {
        let h = self.curv.breaks[j + 1] - self.curv.breaks[j];
        let r = tau / h;
        let dt = d[j] + (d[j + 1] - d[j]) * r;
        let gdj = g * tau / 3.0 * (2.0 * d[j] + dt);
        let gdt = g * tau / 3.0 * (d[j] + 2.0 * dt);
        gd[j] += gdj + gdt * (1.0 - r);
        gd[j + 1] += gdt * r;
        // full intervals k < j
        suffix[j] += g;
    }

    /// Log posterior density and its gradient at unconstrained `x`.
    /// Returns `−∞` (gradient unspecified) where the density is not finite.
    pub fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.evaluate(x, Some(grad), None);
        if v.is_finite() && grad.iter().all(|g| g.is_finite()) {
            v
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.evaluate(x, None, None)
    }

    /// Per-subject survival log-likelihood at `x` (unweighted).
    pub fn pointwise_survival(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.subjects.len()];
        self.evaluate(x, None, Some(&mut out));
        out
    }

    fn evaluate(&self, x: &[f64], mut grad: Option<&mut [f64]>, mut pointwise: Option<&mut [f64]>) -> f64 {
        let lay = &self.layout;
        let model = &self.model;
        let pr = &model.priors;
        assert_eq!(x.len(), lay.dim, "parameter vector length");
        let want_grad = grad.is_some();
        let mut g_local = if want_grad { vec![] } else { vec![0.0; lay.dim] };
        let g: &mut [f64] = match grad.as_deref_mut() {
            Some(g) => {
                g.iter_mut().for_each(|v| *v = 0.0);
                g
            }
            None => &mut g_local,
        };

        let beta_l = &x[lay.beta_l.clone()];
        let gamma = &x[lay.gamma.clone()];
        let alpha1 = x[lay.alpha1];
        let alpha2 = x[lay.alpha2];
        let log_s2 = x[lay.log_sigma_e2];
        let s2 = log_s2.exp();
        let pop = &x[lay.pop.clone()];
        let (weib_shape, h0_off) = match model.hazard.kind {
            HazardKind::Weibull => (x[lay.hazard.start].exp(), x[lay.hazard.start + 1]),
            HazardKind::SplineLogHazard { .. } => (0.0, 0.0),
        };
        let h0_coef = &x[lay.hazard.clone()];

        let n_curv = self.curv.n_funcs;
        let nb = self.curv.n_breaks();
        let sd_dim = lay.subj_dim;
        let mut sc = Scratch {
            b: vec![0.0; sd_dim],
            gb: vec![0.0; sd_dim],
            c: vec![0.0; n_curv],
            gc: vec![0.0; n_curv],
            d: vec![0.0; nb],
            gd: vec![0.0; nb],
            cum_w: vec![0.0; nb],
            sd: vec![0.0; sd_dim],
        };
        let mut suffix = vec![0.0; nb];
        let mut gpop = vec![0.0; pop.len()];
        let mut g_beta_l = vec![0.0; beta_l.len()];
        let mut g_gamma = vec![0.0; gamma.len()];
        let (mut g_a1, mut g_a2, mut g_logs2) = (0.0, 0.0, 0.0);
        let mut g_h0 = vec![0.0; lay.hazard.len()];
        let mut g_log_sd = vec![0.0; sd_dim];
        let needs_curv = alpha2 != 0.0 || want_grad;
        let kind = model.wiv.kind;

        let mut lp = 0.0;
        for (i, s) in self.subjects.iter().enumerate() {
            let u = &x[lay.subject(i)];
            // subject coefficients on the natural scale
            let sd = &mut sc.sd;
            for j in 0..sd_dim {
                sd[j] = model.log_sd(lay, x, i, j).exp();
                sc.b[j] = if model.noncentered[j] { model.subject_prior_mean(j) + sd[j] * u[j] } else { u[j] };
            }
            sc.gb.iter_mut().for_each(|v| *v = 0.0);
            let sd = &sc.sd;
            let b = &sc.b;

            // longitudinal
            let fixed_l = dot(&s.w_long, beta_l);
            let n_obs = s.y.len();
            let mut rss = 0.0;
            for o in 0..n_obs {
                let prow = &s.obs_pop[o * self.pop_row..(o + 1) * self.pop_row];
                let srow = &s.obs_subj[o * self.subj_row..(o + 1) * self.subj_row];
                let r = s.y[o] - fixed_l - self.mu(prow, srow, pop, b);
                rss += r * r;
                if want_grad {
                    let gm = r / s2;
                    for (gk, w) in g_beta_l.iter_mut().zip(&s.w_long) {
                        *gk += gm * w;
                    }
                    self.mu_grad(prow, srow, pop, b, gm, &mut gpop, &mut sc.gb);
                }
            }
            lp += -0.5 * n_obs as f64 * (LN_2PI + log_s2) - 0.5 * rss / s2;
            g_logs2 += -0.5 * n_obs as f64 + 0.5 * rss / s2;

            // survival
            let omega = self.survival_weights[i];
            if !s.pts.is_empty() {
                let lb = s.last_break;
                if needs_curv {
                    self.curvature_coeffs(pop, b, &mut sc.c);
                    for k in 0..=lb {
                        let row = &self.curv.dd[k * n_curv..(k + 1) * n_curv];
                        sc.d[k] = dot(row, &sc.c);
                        sc.gd[k] = 0.0;
                        suffix[k] = 0.0;
                    }
                    if kind != WivKind::Current {
                        sc.cum_w[0] = 0.0;
                        for k in 0..lb {
                            let h = self.curv.breaks[k + 1] - self.curv.breaks[k];
                            let (d0, d1) = (sc.d[k], sc.d[k + 1]);
                            sc.cum_w[k + 1] = sc.cum_w[k] + h / 3.0 * (d0 * d0 + d0 * d1 + d1 * d1);
                        }
                    }
                }
                let fixed_s = dot(&s.w_surv, gamma);
                let mut ll = 0.0;
                for (p, pt) in s.pts.iter().enumerate() {
                    let prow = &s.pt_pop[p * self.pop_row..(p + 1) * self.pop_row];
                    let srow = &s.pt_subj[p * self.subj_row..(p + 1) * self.subj_row];
                    let m = fixed_l + self.mu(prow, srow, pop, b);
                    let wiv = if needs_curv {
                        match kind {
                            WivKind::Current => {
                                let (j, tau) = pt.loc;
                                let h = self.curv.breaks[j + 1] - self.curv.breaks[j];
                                (sc.d[j] + (sc.d[j + 1] - sc.d[j]) * tau / h).abs()
                            }
                            WivKind::Cumulative => {
                                self.cumulative_at(&sc.d, &sc.cum_w, pt.loc).max(0.0).sqrt()
                            }
                            WivKind::Windowed => {
                                let c = (self.cumulative_at(&sc.d, &sc.cum_w, pt.loc)
                                    - self.cumulative_at(&sc.d, &sc.cum_w, pt.loc_lo))
                                .max(0.0);
                                c.sqrt()
                            }
                        }
                    } else {
                        0.0
                    };
                    let log_h0 = match model.hazard.kind {
                        HazardKind::Weibull => h0_off + weib_shape.ln() + (weib_shape - 1.0) * pt.log_t,
                        HazardKind::SplineLogHazard { .. } => {
                            (0..4).map(|k| pt.h0_vals[k] * h0_coef[pt.h0_first + k]).sum()
                        }
                    };
                    let log_h = log_h0 + fixed_s + alpha1 * m + alpha2 * wiv;
                    // derivative of the subject's log-likelihood w.r.t. log h at this point
                    let gl = if pt.weight == 0.0 {
                        ll += log_h;
                        1.0
                    } else {
                        let h = pt.weight * log_h.exp();
                        ll -= h;
                        -h
                    };
                    if !want_grad {
                        continue;
                    }
                    let gl = gl * omega;
                    match model.hazard.kind {
                        HazardKind::Weibull => {
                            g_h0[0] += gl * (1.0 + weib_shape * pt.log_t);
                            g_h0[1] += gl;
                        }
                        HazardKind::SplineLogHazard { .. } => {
                            for k in 0..4 {
                                g_h0[pt.h0_first + k] += gl * pt.h0_vals[k];
                            }
                        }
                    }
                    for (gk, w) in g_gamma.iter_mut().zip(&s.w_surv) {
                        *gk += gl * w;
                    }
                    g_a1 += gl * m;
                    g_a2 += gl * wiv;
                    let gm = gl * alpha1;
                    for (gk, w) in g_beta_l.iter_mut().zip(&s.w_long) {
                        *gk += gm * w;
                    }
                    self.mu_grad(prow, srow, pop, b, gm, &mut gpop, &mut sc.gb);
                    let gw = gl * alpha2;
                    if gw == 0.0 {
                        continue;
                    }
                    match kind {
                        WivKind::Current => {
                            let (j, tau) = pt.loc;
                            let h = self.curv.breaks[j + 1] - self.curv.breaks[j];
                            let r = tau / h;
                            let dd = sc.d[j] + (sc.d[j + 1] - sc.d[j]) * r;
                            let sg = if dd > 0.0 { gw } else if dd < 0.0 { -gw } else { 0.0 };
                            sc.gd[j] += sg * (1.0 - r);
                            sc.gd[j + 1] += sg * r;
                        }
                        WivKind::Cumulative | WivKind::Windowed => {
                            if wiv > 0.0 {
                                let gcum = gw / (2.0 * wiv);
                                self.cumulative_partial_adjoint(&sc.d, &mut sc.gd, pt.loc, gcum, &mut suffix);
                                if kind == WivKind::Windowed {
                                    self.cumulative_partial_adjoint(&sc.d, &mut sc.gd, pt.loc_lo, -gcum, &mut suffix);
                                }
                            }
                        }
                    }
                }
                if let Some(pw) = pointwise.as_deref_mut() {
                    pw[i] = ll;
                }
                lp += omega * ll;
                if want_grad && needs_curv {
                    if kind != WivKind::Current {
                        // interval k < j receives the weights of all points located past it
                        let mut acc = 0.0;
                        for k in (0..lb).rev() {
                            acc += suffix[k + 1];
                            if acc != 0.0 {
                                let h = self.curv.breaks[k + 1] - self.curv.breaks[k];
                                let (d0, d1) = (sc.d[k], sc.d[k + 1]);
                                sc.gd[k] += acc * h / 3.0 * (2.0 * d0 + d1);
                                sc.gd[k + 1] += acc * h / 3.0 * (d0 + 2.0 * d1);
                            }
                        }
                    }
                    sc.gc.iter_mut().for_each(|v| *v = 0.0);
                    for k in 0..=lb {
                        let gdk = sc.gd[k];
                        if gdk != 0.0 {
                            let row = &self.curv.dd[k * n_curv..(k + 1) * n_curv];
                            for (gcv, r) in sc.gc.iter_mut().zip(row) {
                                *gcv += gdk * r;
                            }
                        }
                    }
                    let (b_ref, gc_ref) = (&sc.b, &sc.gc);
                    self.curvature_coeffs_adjoint(pop, b_ref, gc_ref, &mut gpop, &mut sc.gb);
                }
            } else if let Some(pw) = pointwise.as_deref_mut() {
                pw[i] = 0.0;
            }

            // subject-level prior; `sc.gb` holds ∂(likelihood)/∂b
            for j in 0..sd_dim {
                let m0 = model.subject_prior_mean(j);
                let ui = lay.subject(i).start + j;
                if model.noncentered[j] {
                    let z = u[j];
                    lp += -0.5 * z * z - 0.5 * LN_2PI;
                    g[ui] = sc.gb[j] * sd[j] - z;
                    g_log_sd[j] = sc.gb[j] * sd[j] * z;
                } else {
                    let r = (u[j] - m0) / sd[j];
                    lp += -0.5 * r * r - sd[j].ln() - 0.5 * LN_2PI;
                    g[ui] = sc.gb[j] - r / sd[j];
                    g_log_sd[j] = r * r - 1.0;
                }
            }
            if want_grad {
                for j in 0..sd_dim {
                    match model.representation() {
                        Representation::Pspline if j >= 2 => {
                            g[lay.log_s.start + i] += g_log_sd[j];
                            g[lay.log_tau_k.start + j - 2] += g_log_sd[j];
                        }
                        _ => g[lay.log_re_var.start + j] += 0.5 * g_log_sd[j],
                    }
                }
            }
        }

        // population-level priors (with log-Jacobians of the positive transforms)
        let fsd2 = pr.fixed_sd * pr.fixed_sd;
        let norm_c = -pr.fixed_sd.ln() - 0.5 * LN_2PI;
        let fixed_normal = |k: usize, lp: &mut f64, g: &mut [f64]| {
            *lp += -0.5 * x[k] * x[k] / fsd2 + norm_c;
            g[k] -= x[k] / fsd2;
        };
        for (k, gk) in lay.beta_l.clone().zip(&g_beta_l) {
            g[k] += gk;
        }
        for (k, gk) in lay.gamma.clone().zip(&g_gamma) {
            g[k] += gk;
        }
        g[lay.alpha1] += g_a1;
        g[lay.alpha2] += g_a2;
        g[lay.log_sigma_e2] += g_logs2;
        for (k, gk) in lay.hazard.clone().zip(&g_h0) {
            g[k] += gk;
        }
        for (k, gk) in lay.pop.clone().zip(&gpop) {
            g[k] += gk;
        }
        for k in lay.beta_l.clone().chain(lay.gamma.clone()).chain([lay.alpha1, lay.alpha2]) {
            fixed_normal(k, &mut lp, g);
        }
        let ig = |k: usize, lp: &mut f64, g: &mut [f64]| {
            let (v, d) = inv_gamma_eta(x[k], pr.ig_shape, pr.ig_scale);
            *lp += v;
            g[k] += d;
        };
        ig(lay.log_sigma_e2, &mut lp, g);
        match model.hazard.kind {
            HazardKind::Weibull => {
                let k = lay.hazard.start;
                let a = weib_shape;
                let sc2 = pr.weibull_shape_scale * pr.weibull_shape_scale;
                lp += (2.0 / (std::f64::consts::PI * pr.weibull_shape_scale)).ln() - (1.0 + a * a / sc2).ln() + x[k];
                g[k] += 1.0 - 2.0 * a * a / (sc2 + a * a);
                fixed_normal(k + 1, &mut lp, g);
            }
            HazardKind::SplineLogHazard { .. } => {
                for k in lay.hazard.clone() {
                    fixed_normal(k, &mut lp, g);
                }
            }
        }
        match &self.rw2 {
            None => {
                for k in lay.pop.clone() {
                    fixed_normal(k, &mut lp, g);
                }
            }
            Some(rw) => {
                for k in 0..rw.range.start {
                    fixed_normal(lay.pop.start + k, &mut lp, g);
                }
                let kt = lay.log_tau_beta.expect("layout has tau_beta");
                let eta = x[kt];
                let tau = eta.exp();
                let beta = DVector::from_column_slice(&pop[rw.range.clone()]);
                let pb = &rw.precision * &beta;
                let q = beta.dot(&pb);
                let m = beta.len() as f64;
                lp += 0.5 * (m * eta + rw.logdet) - 0.5 * m * LN_2PI - 0.5 * tau * q;
                for (k, v) in pb.iter().enumerate() {
                    g[lay.pop.start + rw.range.start + k] -= tau * v;
                }
                g[kt] += 0.5 * m - 0.5 * tau * q;
                lp += gamma_eta(eta, pr.tau_beta_shape, pr.tau_beta_rate);
                g[kt] += pr.tau_beta_shape - pr.tau_beta_rate * tau;
            }
        }
        for k in lay.log_re_var.clone() {
            ig(k, &mut lp, g);
        }
        for k in lay.log_tau_k.clone() {
            lp += gamma_eta(x[k], pr.tau_k_shape, pr.tau_k_rate);
            g[k] += pr.tau_k_shape - pr.tau_k_rate * x[k].exp();
        }
        let s2c = pr.s_scale * pr.s_scale;
        for k in lay.log_s.clone() {
            let s = x[k].exp();
            lp += std::f64::consts::LN_2 - 0.5 * s * s / s2c - pr.s_scale.ln() - 0.5 * LN_2PI + x[k];
            g[k] += 1.0 - s * s / s2c;
        }
        lp
    }

    /// Natural-scale parameters at `x`.
    pub fn constrain(&self, x: &[f64]) -> Result<ParameterVector> {
        ParameterVector::from_unconstrained(&self.model, x)
    }

    /// Population-level values recorded for each draw. For SMRE the
    /// mean-one recentring of `b_i2` is applied first.
    pub fn record(&self, x: &[f64]) -> Result<(Vec<f64>, SmreOutcome)> {
        let mut p = self.constrain(x)?;
        let outcome = if self.model.representation() == Representation::Smre {
            apply_smre_constraint(&mut p)
        } else {
            SmreOutcome::NotApplicable
        };
        Ok((p.global_values(), outcome))
    }

    /// Starting point: data-informed population curve, residual variance and
    /// crude event rate, unit variance components (FPCA: the preliminary
    /// eigenvalues), then `N(0, 0.1²)` jitter on every unconstrained coordinate.
    pub fn initial_point(&self, seed: u64) -> Result<Vec<f64>> {
        let model = &self.model;
        let lay = &self.layout;
        let mut x = vec![0.0; lay.dim];
        // pooled least squares for the population curve (unit multiplier for SMRE)
        let p = self.pop_row;
        let mut xtx = DMatrix::<f64>::identity(p, p) * 1e-3;
        let mut xty = DVector::<f64>::zeros(p);
        for s in &self.subjects {
            for o in 0..s.y.len() {
                let row = &s.obs_pop[o * p..(o + 1) * p];
                for a in 0..p {
                    xty[a] += row[a] * s.y[o];
                    for c in 0..p {
                        xtx[(a, c)] += row[a] * row[c];
                    }
                }
            }
        }
        let pop0 = xtx.cholesky().map(|c| c.solve(&xty)).unwrap_or_else(|| DVector::zeros(p));
        x[lay.pop.clone()].copy_from_slice(pop0.as_slice());
        x[lay.log_sigma_e2] = (0.25 * self.pooled_var).ln();
        match model.hazard.kind {
            HazardKind::Weibull => {
                x[lay.hazard.start] = 0.0;
                x[lay.hazard.start + 1] = self.crude_rate.ln();
            }
            HazardKind::SplineLogHazard { .. } => {
                for k in lay.hazard.clone() {
                    x[k] = self.crude_rate.ln();
                }
            }
        }
        if let Variant::Fpca { eigenvalues, .. } = &model.trajectory.variant {
            for (k, l) in lay.log_re_var.clone().zip(eigenvalues) {
                x[k] = l.max(1e-8).ln();
            }
        }
        if model.representation() == Representation::Smre {
            for i in 0..lay.n_subjects {
                let k = lay.subject(i).start + 2;
                x[k] = if model.noncentered[2] { 0.0 } else { 1.0 };
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, 0.1).expect("valid normal");
        for v in x.iter_mut() {
            *v += jitter.sample(&mut rng);
        }
        Ok(x)
    }
}

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Inverse-gamma(shape, scale) log-density of `e^η` plus the log-Jacobian
/// `η`, and its derivative in `η`.
pub(crate) fn inv_gamma_eta(eta: f64, shape: f64, scale: f64) -> (f64, f64) {
    let e = (-eta).exp();
    (shape * scale.ln() - ln_gamma(shape) - shape * eta - scale * e, -shape + scale * e)
}

/// Gamma(shape, rate) log-density of `e^η` plus the log-Jacobian `η`.
pub(crate) fn gamma_eta(eta: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + shape * eta - rate * eta.exp()
}
