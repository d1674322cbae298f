use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::hazard::{HazardKind, HazardParams, HazardSpec};
use crate::error::{Error, Result};
use crate::trajectory::{Representation, TrajectoryModel, WivSpec};

/// Prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Standard deviation of the normal prior on fixed effects, associations,
    /// the Weibull log-scale and log-hazard spline coefficients.
    pub fixed_sd: f64,
    /// Inverse-gamma shape and scale for variance parameters.
    pub ig_shape: f64,
    pub ig_scale: f64,
    /// Gamma shape and rate for the RW2 smoothing precision.
    pub tau_beta_shape: f64,
    pub tau_beta_rate: f64,
    /// Gamma shape and rate for the global scales `τ_k` of the orthogonalised coefficients.
    pub tau_k_shape: f64,
    pub tau_k_rate: f64,
    /// Half-normal scale of the subject-level scales `s_i`.
    pub s_scale: f64,
    /// Half-Cauchy scale of the Weibull shape.
    pub weibull_shape_scale: f64,
    /// Ridge added to the RW2 penalty.
    pub ridge: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            fixed_sd: 10.0,
            ig_shape: 0.01,
            ig_scale: 0.01,
            tau_beta_shape: 0.01,
            tau_beta_rate: 0.01,
            tau_k_shape: 2.0,
            tau_k_rate: 1.0,
            s_scale: 5.0,
            weibull_shape_scale: 1.0,
            ridge: 1e-6,
        }
    }
}

/// Complete joint-model definition (everything except the data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointModel {
    pub trajectory: TrajectoryModel,
    pub hazard: HazardSpec,
    pub wiv: WivSpec,
    pub priors: PriorConfig,
    pub n_long_cov: usize,
    pub n_surv_cov: usize,
    /// Per subject coefficient: sample `z` with `b = m + sd·z` instead of `b`.
    pub noncentered: Vec<bool>,
}

impl JointModel {
    pub fn new(trajectory: TrajectoryModel, hazard: HazardSpec, wiv: WivSpec, n_long_cov: usize, n_surv_cov: usize) -> Self {
        let noncentered = default_noncentered(&trajectory);
        Self { trajectory, hazard, wiv, priors: PriorConfig::default(), n_long_cov, n_surv_cov, noncentered }
    }

    pub fn representation(&self) -> Representation {
        self.trajectory.representation()
    }

    pub fn has_tau_beta(&self) -> bool {
        self.representation() != Representation::Rspline
    }

    /// Number of random-effect variance parameters.
    pub fn n_re_var(&self) -> usize {
        match self.representation() {
            Representation::Rspline | Representation::Fpca => self.trajectory.subj_dim(),
            Representation::Pspline => 2,
            Representation::Smre => 3,
        }
    }

    pub fn n_tau_k(&self) -> usize {
        match self.representation() {
            Representation::Pspline => self.trajectory.subj_dim() - 2,
            _ => 0,
        }
    }

    pub fn has_subject_scales(&self) -> bool {
        self.representation() == Representation::Pspline
    }

    /// Prior mean of subject coefficient `j` (one for the SMRE multiplier).
    pub fn subject_prior_mean(&self, j: usize) -> f64 {
        if self.representation() == Representation::Smre && j == 2 {
            1.0
        } else {
            0.0
        }
    }

    pub fn re_var_names(&self) -> Vec<String> {
        match self.representation() {
            Representation::Rspline => (1..=self.n_re_var()).map(|k| format!("sigma2_b[{k}]")).collect(),
            Representation::Fpca => (1..=self.n_re_var()).map(|k| format!("nu2[{k}]")).collect(),
            Representation::Pspline => vec!["sigma2_b0".into(), "sigma2_b1".into()],
            Representation::Smre => vec!["sigma2_b0".into(), "sigma2_b1".into(), "sigma2_b2".into()],
        }
    }

    pub fn layout(&self, n_subjects: usize) -> Layout {
        let mut off = 0;
        let mut take = |len: usize| {
            let r = off..off + len;
            off += len;
            r
        };
        let beta_l = take(self.n_long_cov);
        let gamma = take(self.n_surv_cov);
        let alpha1 = take(1).start;
        let alpha2 = take(1).start;
        let log_sigma_e2 = take(1).start;
        let hazard = take(self.hazard.dim());
        let pop = take(self.trajectory.pop_dim());
        let log_tau_beta = if self.has_tau_beta() { Some(take(1).start) } else { None };
        let log_re_var = take(self.n_re_var());
        let log_tau_k = take(self.n_tau_k());
        let log_s = take(if self.has_subject_scales() { n_subjects } else { 0 });
        let subj_dim = self.trajectory.subj_dim();
        let subjects = take(n_subjects * subj_dim);
        Layout {
            n_subjects,
            subj_dim,
            beta_l,
            gamma,
            alpha1,
            alpha2,
            log_sigma_e2,
            hazard,
            pop,
            log_tau_beta,
            log_re_var,
            log_tau_k,
            log_s,
            subjects,
            dim: off,
        }
    }

    /// Log standard deviation of subject `i`'s coefficient `j`.
    pub(crate) fn log_sd(&self, lay: &Layout, x: &[f64], i: usize, j: usize) -> f64 {
        match self.representation() {
            Representation::Pspline if j >= 2 => x[lay.log_s.start + i] + x[lay.log_tau_k.start + j - 2],
            _ => 0.5 * x[lay.log_re_var.start + j],
        }
    }

    /// Names of the population-level quantities recorded per draw.
    pub fn global_names(&self) -> Vec<String> {
        let mut v: Vec<String> = (1..=self.n_long_cov).map(|k| format!("beta_l[{k}]")).collect();
        v.extend((1..=self.n_surv_cov).map(|k| format!("gamma[{k}]")));
        v.push("alpha1".into());
        v.push("alpha2".into());
        v.push("sigma_e2".into());
        v.extend(self.hazard.names());
        v.extend(self.trajectory.pop_names());
        if self.has_tau_beta() {
            v.push("tau_beta".into());
        }
        v.extend(self.re_var_names());
        v.extend((1..=self.n_tau_k()).map(|k| format!("tau_k[{k}]")));
        v
    }
}

/// Subject coefficients sampled non-centred by default: the orthogonalised
/// P-spline coefficients, whose local-global scales are weakly identified.
pub fn default_noncentered(traj: &TrajectoryModel) -> Vec<bool> {
    let d = traj.subj_dim();
    match traj.representation() {
        Representation::Pspline => (0..d).map(|j| j >= 2).collect(),
        _ => vec![false; d],
    }
}

/// Offsets of every block inside the unconstrained parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub n_subjects: usize,
    pub subj_dim: usize,
    pub beta_l: Range<usize>,
    pub gamma: Range<usize>,
    pub alpha1: usize,
    pub alpha2: usize,
    pub log_sigma_e2: usize,
    pub hazard: Range<usize>,
    pub pop: Range<usize>,
    pub log_tau_beta: Option<usize>,
    pub log_re_var: Range<usize>,
    pub log_tau_k: Range<usize>,
    pub log_s: Range<usize>,
    pub subjects: Range<usize>,
    pub dim: usize,
}

impl Layout {
    pub fn subject(&self, i: usize) -> Range<usize> {
        let s = self.subjects.start + i * self.subj_dim;
        s..s + self.subj_dim
    }
}

/// All model parameters on their natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub beta_l: Vec<f64>,
    pub gamma: Vec<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub sigma_e2: f64,
    pub hazard: HazardParams,
    pub population: Vec<f64>,
    pub tau_beta: Option<f64>,
    pub re_variances: Vec<f64>,
    pub tau_k: Vec<f64>,
    pub subject_scales: Vec<f64>,
    /// `n × subj_dim` subject coefficients `b_i` (natural scale).
    pub subjects: Vec<Vec<f64>>,
}

impl ParameterVector {
    /// Standard deviation of subject `i`'s coefficient `j` under the prior.
    pub fn subject_sd(&self, model: &JointModel, i: usize, j: usize) -> f64 {
        match model.representation() {
            Representation::Pspline if j >= 2 => self.subject_scales[i] * self.tau_k[j - 2],
            _ => self.re_variances[j].sqrt(),
        }
    }

    /// Population-level values in the order of [`JointModel::global_names`].
    pub fn global_values(&self) -> Vec<f64> {
        let mut v = self.beta_l.clone();
        v.extend(&self.gamma);
        v.push(self.alpha1);
        v.push(self.alpha2);
        v.push(self.sigma_e2);
        v.extend(self.hazard.values());
        v.extend(&self.population);
        if let Some(t) = self.tau_beta {
            v.push(t);
        }
        v.extend(&self.re_variances);
        v.extend(&self.tau_k);
        v
    }

    pub fn check_layout(&self, model: &JointModel) -> Result<()> {
        let sd = model.trajectory.subj_dim();
        let ok = self.beta_l.len() == model.n_long_cov
            && self.gamma.len() == model.n_surv_cov
            && self.population.len() == model.trajectory.pop_dim()
            && self.tau_beta.is_some() == model.has_tau_beta()
            && self.re_variances.len() == model.n_re_var()
            && self.tau_k.len() == model.n_tau_k()
            && (!model.has_subject_scales() || self.subject_scales.len() == self.subjects.len())
            && self.subjects.iter().all(|b| b.len() == sd)
            && self.hazard.values().len() == model.hazard.dim();
        if !ok {
            return Err(Error::argument("parameter vector layout does not match the model"));
        }
        let finite = self.global_values().iter().chain(self.subjects.iter().flatten()).chain(&self.subject_scales).all(|v| v.is_finite());
        if !finite {
            return Err(Error::numeric("parameter vector contains non-finite values"));
        }
        Ok(())
    }

    /// Maps an unconstrained vector to natural parameters.
    pub fn from_unconstrained(model: &JointModel, x: &[f64]) -> Result<Self> {
        let lay = model.layout(subjects_in(model, x.len())?);
        let hazard = match &model.hazard.kind {
            HazardKind::Weibull => HazardParams::Weibull {
                shape: x[lay.hazard.start].exp(),
                log_scale: x[lay.hazard.start + 1],
            },
            HazardKind::SplineLogHazard { .. } => HazardParams::Spline { coef: x[lay.hazard.clone()].to_vec() },
        };
        let subjects = (0..lay.n_subjects)
            .map(|i| {
                let u = &x[lay.subject(i)];
                (0..lay.subj_dim)
                    .map(|j| {
                        if model.noncentered[j] {
                            model.subject_prior_mean(j) + model.log_sd(&lay, x, i, j).exp() * u[j]
                        } else {
                            u[j]
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            beta_l: x[lay.beta_l.clone()].to_vec(),
            gamma: x[lay.gamma.clone()].to_vec(),
            alpha1: x[lay.alpha1],
            alpha2: x[lay.alpha2],
            sigma_e2: x[lay.log_sigma_e2].exp(),
            hazard,
            population: x[lay.pop.clone()].to_vec(),
            tau_beta: lay.log_tau_beta.map(|k| x[k].exp()),
            re_variances: x[lay.log_re_var.clone()].iter().map(|v| v.exp()).collect(),
            tau_k: x[lay.log_tau_k.clone()].iter().map(|v| v.exp()).collect(),
            subject_scales: x[lay.log_s.clone()].iter().map(|v| v.exp()).collect(),
            subjects,
        })
    }

    /// Inverse of [`Self::from_unconstrained`].
    pub fn to_unconstrained(&self, model: &JointModel) -> Result<Vec<f64>> {
        self.check_layout(model)?;
        let n = self.subjects.len();
        let lay = model.layout(n);
        let mut x = vec![0.0; lay.dim];
        x[lay.beta_l.clone()].copy_from_slice(&self.beta_l);
        x[lay.gamma.clone()].copy_from_slice(&self.gamma);
        x[lay.alpha1] = self.alpha1;
        x[lay.alpha2] = self.alpha2;
        x[lay.log_sigma_e2] = self.sigma_e2.ln();
        match &self.hazard {
            HazardParams::Weibull { shape, log_scale } => {
                x[lay.hazard.start] = shape.ln();
                x[lay.hazard.start + 1] = *log_scale;
            }
            HazardParams::Spline { coef } => x[lay.hazard.clone()].copy_from_slice(coef),
        }
        x[lay.pop.clone()].copy_from_slice(&self.population);
        if let (Some(k), Some(t)) = (lay.log_tau_beta, self.tau_beta) {
            x[k] = t.ln();
        }
        for (k, v) in lay.log_re_var.clone().zip(&self.re_variances) {
            x[k] = v.ln();
        }
        for (k, v) in lay.log_tau_k.clone().zip(&self.tau_k) {
            x[k] = v.ln();
        }
        for (k, v) in lay.log_s.clone().zip(&self.subject_scales) {
            x[k] = v.ln();
        }
        for i in 0..n {
            for j in 0..lay.subj_dim {
                let b = self.subjects[i][j];
                x[lay.subject(i).start + j] = if model.noncentered[j] {
                    (b - model.subject_prior_mean(j)) / model.log_sd(&lay, &x, i, j).exp()
                } else {
                    b
                };
            }
        }
        Ok(x)
    }
}

/// Infers the number of subjects from the length of an unconstrained vector.
pub(crate) fn subjects_in(model: &JointModel, len: usize) -> Result<usize> {
    let fixed = model.layout(0).dim;
    let per = model.trajectory.subj_dim() + usize::from(model.has_subject_scales());
    if len < fixed || (len - fixed) % per != 0 {
        return Err(Error::argument(format!("vector of length {len} does not match the model layout")));
    }
    Ok((len - fixed) / per)
}
