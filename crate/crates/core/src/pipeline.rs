//! Dataset + configuration → joint model → posterior draws.

use std::time::Instant;

use log::info;

use crate::config::{BaselineHazard, FitConfig, RsplineKnots};
use crate::data::{Dataset, SubjectId};
use crate::error::{Error, Result};
use crate::evalreport::{psis_loo, LooResult, ReplicationResult};
use crate::fpca::run_fpca;
use crate::jointmodel::{HazardSpec, JointModel, Posterior};
use crate::sampler::{run_chains, DiagnosticsReport, PosteriorDraws};
use crate::simgen::{generate, ScenarioConfig};
use crate::splinecore::{build_ortho_basis, KnotConfig};
use crate::stats::quantile;
use crate::trajectory::{Representation, TrajectoryModel};

/// Padded `[0, max observed time]` covering every visit and exit.
pub fn time_domain(ds: &Dataset) -> (f64, f64) {
    KnotConfig::padded_range(0.0, ds.max_time())
}

/// Interior knots of the regression-spline representation.
pub fn rspline_interior(cfg: &FitConfig, ds: &Dataset) -> Result<Vec<f64>> {
    if let Some(k) = &cfg.basis.rspline_interior {
        return Ok(k.clone());
    }
    match cfg.basis.rspline_knots {
        RsplineKnots::Midpoint => Ok(vec![0.5 * ds.max_time()]),
        RsplineKnots::Quantiles3 => {
            let mut t: Vec<f64> = ds.longitudinal.iter().map(|r| r.time).collect();
            if t.is_empty() {
                return Err(Error::data("no longitudinal measurements to place knots"));
            }
            t.sort_by(f64::total_cmp);
            let mut k: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|&q| quantile(&t, q)).collect();
            k.dedup();
            Ok(k)
        }
    }
}

pub fn build_trajectory(cfg: &FitConfig, ds: &Dataset) -> Result<TrajectoryModel> {
    let (lo, hi) = time_domain(ds);
    let b = &cfg.basis;
    match cfg.representation {
        Representation::Rspline => Ok(TrajectoryModel::rspline(KnotConfig::new(3, rspline_interior(cfg, ds)?, lo, hi)?)),
        Representation::Pspline => {
            let ortho =
                build_ortho_basis(&KnotConfig::uniform_cubic(b.ortho_basis, lo, hi)?.with_extended_boundary(), b.ortho_grid, b.ortho_pve)?;
            info!("orthogonalised basis keeps {} of {} functions", ortho.retained_k, b.ortho_basis);
            Ok(TrajectoryModel::pspline(KnotConfig::uniform_cubic(b.mean_basis, lo, hi)?.with_extended_boundary(), &ortho))
        }
        Representation::Fpca => {
            let mean = KnotConfig::uniform_cubic(b.mean_basis, lo, hi)?.with_extended_boundary();
            let fit = run_fpca(&ds.longitudinal, &mean, b.fpca_grid, b.fpca_pve)?;
            info!("FPCA keeps {} components (PVE {:.4})", fit.eigen.n_components(), fit.eigen.pve_achieved);
            Ok(TrajectoryModel::fpca(&fit))
        }
        Representation::Smre => TrajectoryModel::smre(KnotConfig::uniform_cubic(b.mean_basis, 0.0, hi)?),
    }
}

pub fn build_model(cfg: &FitConfig, ds: &Dataset) -> Result<JointModel> {
    cfg.validate()?;
    ds.validate()?;
    let trajectory = build_trajectory(cfg, ds)?;
    let mut hazard = match cfg.hazard {
        BaselineHazard::Weibull => HazardSpec::weibull(),
        BaselineHazard::Spline => HazardSpec::spline_at_median(&ds.event_times(), ds.max_time())?,
    };
    hazard.quadrature_nodes = cfg.quadrature_nodes;
    let mut model = JointModel::new(trajectory, hazard, cfg.wiv_spec()?, ds.n_long_covariates(), ds.n_surv_covariates());
    model.priors = cfg.priors.clone();
    Ok(model)
}

/// Recorded parameter names checked for convergence by default.
pub fn default_key_parameters(names: &[String]) -> Vec<String> {
    names
        .iter()
        .filter(|n| {
            n.starts_with("gamma[") || n.starts_with("beta_l[") || matches!(n.as_str(), "alpha1" | "alpha2" | "sigma_e2")
        })
        .cloned()
        .collect()
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: JointModel,
    pub draws: PosteriorDraws,
    pub diagnostics: DiagnosticsReport,
    pub elapsed_secs: f64,
}

impl FitOutput {
    /// Key parameters (from the config, else the defaults) with R-hat above threshold.
    pub fn unconverged_keys(&self, cfg: &FitConfig) -> Vec<String> {
        let keys =
            if cfg.key_parameters.is_empty() { default_key_parameters(&self.draws.names) } else { cfg.key_parameters.clone() };
        self.diagnostics
            .unconverged()
            .into_iter()
            .filter(|n| keys.iter().any(|k| k == n))
            .map(str::to_string)
            .collect()
    }
}

pub fn fit_dataset(cfg: &FitConfig, ds: &Dataset) -> Result<FitOutput> {
    let start = Instant::now();
    let model = build_model(cfg, ds)?;
    let post = Posterior::new(model.clone(), ds)?;
    info!("fitting {} ({} parameters, {} subjects)", cfg.approach_label(), post.dim(), post.n_subjects());
    let draws = run_chains(&post, &cfg.sampler)?;
    let diagnostics = draws.diagnostics()?;
    Ok(FitOutput { model, draws, diagnostics, elapsed_secs: start.elapsed().as_secs_f64() })
}

/// Subject ids in the order of the pointwise log-likelihood columns.
pub fn subject_order(ds: &Dataset) -> Vec<SubjectId> {
    ds.survival.iter().map(|s| s.subject).collect()
}

/// Survival PSIS-LOO of a completed fit.
pub fn fit_loo(fit: &FitOutput, ds: &Dataset) -> Result<LooResult> {
    psis_loo(&fit.draws.pointwise_rows(), &subject_order(ds))
}

/// Outcome of one approach on one simulated replicate.
#[derive(Debug, Clone)]
pub struct ReplicateFit {
    pub result: ReplicationResult,
    /// Post-warmup divergent transitions out of `n_draws`.
    pub divergences: usize,
    pub n_draws: usize,
    pub unconverged: Vec<String>,
    pub elapsed_secs: f64,
}

/// Generates replicate `r` of `scenario` and fits every approach to it.
/// Tracked parameters are the generating values the fit also records.
pub fn run_replicate(
    scenario: &ScenarioConfig,
    r: u64,
    approaches: &[FitConfig],
    with_loo: bool,
) -> Result<(Vec<ReplicateFit>, std::collections::BTreeMap<String, f64>)> {
    let sim = generate(&scenario.replicate(r))?;
    let mut out = Vec::with_capacity(approaches.len());
    for cfg in approaches {
        let fit = fit_dataset(cfg, &sim.dataset)?;
        let tracked: Vec<String> = sim.truth.keys().filter(|k| fit.draws.index_of(k).is_some()).cloned().collect();
        let loo = if with_loo { Some(fit_loo(&fit, &sim.dataset)?) } else { None };
        let result = ReplicationResult::from_draws(r, &cfg.approach_label(), &fit.draws, &tracked, loo.as_ref())?;
        info!("replicate {r} {}: {:.0}s", cfg.approach_label(), fit.elapsed_secs);
        out.push(ReplicateFit {
            result,
            divergences: fit.draws.divergences(),
            n_draws: fit.draws.n_draws(),
            unconverged: fit.unconverged_keys(cfg),
            elapsed_secs: fit.elapsed_secs,
        });
    }
    Ok((out, sim.truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{generate, Case, ScenarioConfig};
    use crate::trajectory::{Variant, WivKind};

    fn case1(n: usize) -> Dataset {
        generate(&ScenarioConfig::new(Case::Case1, WivKind::Current, n, 3)).unwrap().dataset
    }

    #[test]
    fn rspline_knot_rules() {
        let ds = case1(60);
        let mut cfg = FitConfig { representation: Representation::Rspline, ..FitConfig::default() };
        let mid = rspline_interior(&cfg, &ds).unwrap();
        assert_eq!(mid, vec![0.5 * ds.max_time()]);
        cfg.basis.rspline_knots = RsplineKnots::Quantiles3;
        let q = rspline_interior(&cfg, &ds).unwrap();
        assert_eq!(q.len(), 3);
        let below = |x: f64| ds.longitudinal.iter().filter(|r| r.time <= x).count() as f64 / ds.longitudinal.len() as f64;
        for (k, p) in q.iter().zip([0.25, 0.5, 0.75]) {
            assert!((below(*k) - p).abs() < 0.05, "knot {k} at quantile {p}");
        }
        assert_ne!(build_model(&cfg, &ds).unwrap(), {
            cfg.basis.rspline_knots = RsplineKnots::Midpoint;
            build_model(&cfg, &ds).unwrap()
        });
    }

    #[test]
    fn every_representation_builds() {
        let ds = case1(60);
        for rep in [Representation::Rspline, Representation::Pspline, Representation::Fpca, Representation::Smre] {
            let cfg = FitConfig { representation: rep, ..FitConfig::default() };
            let m = build_model(&cfg, &ds).unwrap();
            assert_eq!(m.representation(), rep);
            if let Variant::Smre { mean } = &m.trajectory.variant {
                assert_eq!(mean.cfg.lo, 0.0);
            }
            Posterior::new(m, &ds).unwrap();
        }
    }

    #[test]
    fn key_parameter_defaults() {
        let names: Vec<String> =
            ["beta_l[1]", "gamma[1]", "alpha1", "alpha2", "sigma_e2", "weibull_shape", "tau_beta"].map(String::from).into();
        assert_eq!(default_key_parameters(&names), names[..5].to_vec());
    }
}
