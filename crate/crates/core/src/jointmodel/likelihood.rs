//! Reference (direct) evaluation of the joint-model log-likelihood and prior
//! on natural-scale parameters. The sampler uses the faster evaluator in
//! `posterior`; these functions define what it must reproduce.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::params::{JointModel, ParameterVector};
use crate::data::Subject;
use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::splinecore::difference_matrix;
use crate::trajectory::Representation;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub(crate) fn normal_lpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
}

pub(crate) fn inv_gamma_lpdf(v: f64, shape: f64, scale: f64) -> f64 {
    if v <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - statrs::function::gamma::ln_gamma(shape) - (shape + 1.0) * v.ln() - scale / v
}

pub(crate) fn gamma_lpdf(v: f64, shape: f64, rate: f64) -> f64 {
    if v <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) + (shape - 1.0) * v.ln() - rate * v
}

pub(crate) fn half_normal_lpdf(v: f64, scale: f64) -> f64 {
    if v < 0.0 {
        return f64::NEG_INFINITY;
    }
    std::f64::consts::LN_2 + normal_lpdf(v, 0.0, scale)
}

pub(crate) fn half_cauchy_lpdf(v: f64, scale: f64) -> f64 {
    if v < 0.0 {
        return f64::NEG_INFINITY;
    }
    (2.0 / (PI * scale)).ln() - (1.0 + (v / scale).powi(2)).ln()
}

/// RW2 precision (without `τ_β`) and the range of population coefficients it
/// applies to. For SMRE the first two spline coefficients of `μ(t)` are fixed
/// at zero, so the prior is the corresponding conditional submatrix.
pub fn rw2_precision(model: &JointModel) -> Result<Option<(std::ops::Range<usize>, DMatrix<f64>)>> {
    let p = model.trajectory.pop_dim();
    Ok(match model.representation() {
        Representation::Rspline => None,
        Representation::Pspline | Representation::Fpca => {
            Some((0..p, difference_matrix(2, p)?.regularized_with(model.priors.ridge)))
        }
        Representation::Smre => {
            let full = difference_matrix(2, p)?.regularized_with(model.priors.ridge);
            Some((2..p, full.view((2, 2), (p - 2, p - 2)).into_owned()))
        }
    })
}

fn check_subjects(params: &ParameterVector, model: &JointModel, subjects: &[Subject]) -> Result<()> {
    params.check_layout(model)?;
    if params.subjects.len() != subjects.len() {
        return Err(Error::argument(format!(
            "{} subject blocks for {} subjects",
            params.subjects.len(),
            subjects.len()
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Σ_ij log N(y_ij; w_Lᵀβ_L + μ_i(t_ij), σ_e²)`.
pub fn loglik_longitudinal(params: &ParameterVector, model: &JointModel, subjects: &[Subject]) -> Result<f64> {
    check_subjects(params, model, subjects)?;
    let sd = params.sigma_e2.sqrt();
    let mut total = 0.0;
    for (i, s) in subjects.iter().enumerate() {
        let fixed = dot(&s.w_long, &params.beta_l);
        for (&t, &y) in s.times.iter().zip(&s.values) {
            let mu = model.trajectory.eval_mu(&params.population, &params.subjects[i], t)?;
            total += normal_lpdf(y, fixed + mu, sd);
        }
    }
    Ok(total)
}

/// Hazard without the at-risk check, used for integrals that start before entry.
fn log_hazard_unchecked(params: &ParameterVector, model: &JointModel, i: usize, s: &Subject, t: f64) -> Result<f64> {
    let b = &params.subjects[i];
    let m = dot(&s.w_long, &params.beta_l) + model.trajectory.eval_mu(&params.population, b, t)?;
    let wiv = model.trajectory.eval_wiv(&params.population, b, &model.wiv, t)?;
    Ok(params.hazard.log_h0(&model.hazard, t)? + dot(&s.w_surv, &params.gamma) + params.alpha1 * m + params.alpha2 * wiv)
}

/// `log h₀(t) + w_Sᵀγ + α₁ m_i(t) + α₂ WIV_i(t)` for subject `i` at risk at `t`.
pub fn log_hazard(params: &ParameterVector, model: &JointModel, i: usize, s: &Subject, t: f64) -> Result<f64> {
    if t < s.entry {
        return Err(Error::domain(format!("t = {t} before entry {} of subject {}", s.entry, s.id)));
    }
    log_hazard_unchecked(params, model, i, s, t)
}

/// `∫ₐᵇ h_i` by Gauss–Legendre quadrature with the model's node count.
pub fn cum_hazard(params: &ParameterVector, model: &JointModel, i: usize, s: &Subject, a: f64, b: f64) -> Result<f64> {
    if b < a || a < 0.0 {
        return Err(Error::argument(format!("invalid interval [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    let gl = GaussLegendre::new(model.hazard.quadrature_nodes);
    let mut total = 0.0;
    for (t, w) in gl.on_interval(a, b) {
        total += w * log_hazard_unchecked(params, model, i, s, t)?.exp();
    }
    Ok(total)
}

/// Per-subject `δ_i log h_i(T_i) − ∫_{entry_i}^{T_i} h_i`.
pub fn loglik_survival_pointwise(params: &ParameterVector, model: &JointModel, subjects: &[Subject]) -> Result<Vec<f64>> {
    check_subjects(params, model, subjects)?;
    subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut l = -cum_hazard(params, model, i, s, s.entry, s.exit)?;
            if s.event {
                l += log_hazard(params, model, i, s, s.exit)?;
            }
            Ok(l)
        })
        .collect()
}

pub fn loglik_survival(params: &ParameterVector, model: &JointModel, subjects: &[Subject]) -> Result<f64> {
    Ok(loglik_survival_pointwise(params, model, subjects)?.iter().sum())
}

/// Sum of all prior log-densities on the natural scale; `−∞` outside the support.
pub fn log_prior(params: &ParameterVector, model: &JointModel) -> Result<f64> {
    params.check_layout(model)?;
    let pr = &model.priors;
    let fsd = pr.fixed_sd;
    let mut lp = 0.0;
    for v in params.beta_l.iter().chain(&params.gamma).chain([&params.alpha1, &params.alpha2]) {
        lp += normal_lpdf(*v, 0.0, fsd);
    }
    lp += inv_gamma_lpdf(params.sigma_e2, pr.ig_shape, pr.ig_scale);
    match &params.hazard {
        super::hazard::HazardParams::Weibull { shape, log_scale } => {
            lp += half_cauchy_lpdf(*shape, pr.weibull_shape_scale) + normal_lpdf(*log_scale, 0.0, fsd);
        }
        super::hazard::HazardParams::Spline { coef } => {
            lp += coef.iter().map(|c| normal_lpdf(*c, 0.0, fsd)).sum::<f64>();
        }
    }
    match rw2_precision(model)? {
        None => lp += params.population.iter().map(|c| normal_lpdf(*c, 0.0, fsd)).sum::<f64>(),
        Some((range, pen)) => {
            for k in 0..range.start {
                lp += normal_lpdf(params.population[k], 0.0, fsd);
            }
            let tau = params.tau_beta.expect("layout checked");
            let beta = DVector::from_column_slice(&params.population[range]);
            let m = beta.len() as f64;
            let logdet = pen.clone().cholesky().map(|c| 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>());
            let logdet = logdet.ok_or_else(|| Error::numeric("RW2 precision is not positive definite"))?;
            lp += 0.5 * (m * tau.ln() + logdet) - 0.5 * m * LN_2PI - 0.5 * tau * beta.dot(&(&pen * &beta));
            lp += gamma_lpdf(tau, pr.tau_beta_shape, pr.tau_beta_rate);
        }
    }
    for v in &params.re_variances {
        lp += inv_gamma_lpdf(*v, pr.ig_shape, pr.ig_scale);
    }
    for t in &params.tau_k {
        lp += gamma_lpdf(*t, pr.tau_k_shape, pr.tau_k_rate);
    }
    for s in &params.subject_scales {
        lp += half_normal_lpdf(*s, pr.s_scale);
    }
    for (i, b) in params.subjects.iter().enumerate() {
        for (j, v) in b.iter().enumerate() {
            let sd = params.subject_sd(model, i, j);
            if !(sd > 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            lp += normal_lpdf(*v, model.subject_prior_mean(j), sd);
        }
    }
    Ok(lp)
}

/// `log |∂(natural)/∂(unconstrained)|` at `params`: log-transformed positive
/// parameters and non-centred subject coefficients.
pub fn log_jacobian(params: &ParameterVector, model: &JointModel) -> f64 {
    let mut lj = params.sigma_e2.ln();
    if let super::hazard::HazardParams::Weibull { shape, .. } = &params.hazard {
        lj += shape.ln();
    }
    lj += params.tau_beta.map_or(0.0, f64::ln);
    lj += params.re_variances.iter().chain(&params.tau_k).chain(&params.subject_scales).map(|v| v.ln()).sum::<f64>();
    for i in 0..params.subjects.len() {
        for j in 0..model.trajectory.subj_dim() {
            if model.noncentered[j] {
                lj += params.subject_sd(model, i, j).ln();
            }
        }
    }
    lj
}
