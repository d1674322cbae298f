//! No-U-turn Hamiltonian Monte Carlo with warmup adaptation, plus
//! convergence diagnostics.

mod adapt;
mod diagnostics;
mod nuts;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use diagnostics::{param_diagnostics, DiagnosticsReport, ParamDiagnostics, RHAT_THRESHOLD};

use crate::jointmodel::Posterior;
use crate::{Error, Result};
use adapt::{find_reasonable_step, DualAveraging, WindowSchedule, Welford};
use nuts::{transition, PhasePoint};

/// Share of divergent warmup transitions above which a fit is abandoned.
pub const MAX_WARMUP_DIVERGENCE: f64 = 0.25;
/// Attempts at finding a finite starting point.
pub const INIT_RETRIES: u64 = 100;

/// A differentiable log density on `R^dim`.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Log density (up to a constant) and its gradient; `−∞` when not finite.
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Labels of the values returned by [`Target::record`].
    fn names(&self) -> Vec<String> {
        (0..self.dim()).map(|k| format!("x{k}")).collect()
    }

    /// Values stored for each retained draw.
    fn record(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    /// Per-observation log-likelihood stored for each retained draw.
    fn pointwise(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Candidate starting point; the default is uniform on `(−2, 2)`.
    fn initial_point(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.dim()).map(|_| rng.random_range(-2.0..2.0)).collect()
    }
}

impl Target for Posterior {
    fn dim(&self) -> usize {
        Posterior::dim(self)
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        Posterior::log_density_and_grad(self, x, grad)
    }

    fn names(&self) -> Vec<String> {
        self.model.global_names()
    }

    fn record(&self, x: &[f64]) -> Vec<f64> {
        match Posterior::record(self, x) {
            Ok((v, _)) => v,
            Err(_) => vec![f64::NAN; self.model.global_names().len()],
        }
    }

    fn pointwise(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.pointwise_survival(x))
    }

    fn initial_point(&self, seed: u64) -> Vec<f64> {
        Posterior::initial_point(self, seed).unwrap_or_else(|_| vec![f64::NAN; Posterior::dim(self)])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub keep: usize,
    pub max_tree_depth: u32,
    pub target_accept: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { chains: 2, warmup: 1000, keep: 1000, max_tree_depth: 10, target_accept: 0.8, seed: 1 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.warmup == 0 || self.keep == 0 {
            return Err(Error::config("chains, warmup and keep must all be at least 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::config("target_accept must lie in (0, 1)"));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::config("max_tree_depth must be at least 1"));
        }
        Ok(())
    }
}

/// Output of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    /// `keep` rows of recorded values.
    pub draws: Vec<Vec<f64>>,
    pub accept_stat: Vec<f64>,
    pub divergent: Vec<bool>,
    pub tree_depth: Vec<u32>,
    pub n_leapfrog: Vec<u32>,
    /// `keep` rows of per-observation log-likelihood (empty if the target has none).
    pub pointwise: Vec<Vec<f64>>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub warmup_divergences: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn keep(&self) -> usize {
        self.chains.first().map_or(0, |c| c.draws.len())
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Draws of column `j`, one vector per chain.
    pub fn column(&self, j: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.draws.iter().map(|d| d[j]).collect()).collect()
    }

    /// Post-warmup divergent transitions over all chains.
    pub fn divergences(&self) -> usize {
        self.chains.iter().map(|c| c.divergent.iter().filter(|d| **d).count()).sum()
    }

    pub fn divergence_rate(&self) -> f64 {
        self.divergences() as f64 / self.n_draws().max(1) as f64
    }

    /// Pointwise log-likelihood rows of all chains, concatenated in chain order.
    pub fn pointwise_rows(&self) -> Vec<Vec<f64>> {
        self.chains.iter().flat_map(|c| c.pointwise.iter().cloned()).collect()
    }

    pub fn diagnostics(&self) -> Result<DiagnosticsReport> {
        let params = (0..self.names.len())
            .map(|j| param_diagnostics(&self.names[j], &self.column(j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(DiagnosticsReport { params, divergences: self.divergences(), n_draws: self.n_draws() })
    }
}

/// Mixes a base seed with a stream index (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// First candidate starting point with a finite density and gradient, trying
/// up to [`INIT_RETRIES`] deterministic candidates.
pub fn initialize<T: Target + ?Sized>(target: &T, seed: u64) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; target.dim()];
    for attempt in 0..INIT_RETRIES {
        let x = target.initial_point(derive_seed(seed, attempt));
        if x.len() == target.dim() && x.iter().all(|v| v.is_finite()) {
            let lp = target.log_density_and_grad(&x, &mut grad);
            if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
                return Ok(x);
            }
        }
    }
    Err(Error::FitFailure(format!("no finite starting point after {INIT_RETRIES} attempts")))
}

fn run_chain<T: Target + ?Sized>(target: &T, cfg: &SamplerConfig, chain: usize) -> Result<ChainDraws> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64 + 1);
    let init = initialize(target, derive_seed(cfg.seed, chain as u64))?;
    let dim = target.dim();
    let mut z = PhasePoint::new(target, init);
    let mut inv_metric = vec![1.0; dim];
    let mut eps = find_reasonable_step(target, &z, 1.0, &inv_metric, &mut rng);
    let mut da = DualAveraging::new(cfg.target_accept, eps);
    let mut schedule = WindowSchedule::new(cfg.warmup);
    let mut welford = Welford::new(dim);
    let mut warmup_divergences = 0;

    for it in 0..cfg.warmup {
        let info = transition(target, &mut z, eps, &inv_metric, cfg.max_tree_depth, &mut rng);
        warmup_divergences += usize::from(info.divergent);
        eps = da.update(info.accept_stat);
        if schedule.in_slow_window(it) {
            welford.add(&z.q);
        }
        if schedule.is_window_end(it) {
            inv_metric = welford.regularized_variance();
            welford = Welford::new(dim);
            schedule.advance(it);
            eps = find_reasonable_step(target, &z, eps, &inv_metric, &mut rng);
            da = DualAveraging::new(cfg.target_accept, eps);
        }
    }
    if warmup_divergences as f64 > MAX_WARMUP_DIVERGENCE * cfg.warmup as f64 {
        return Err(Error::FitFailure(format!(
            "chain {chain}: {warmup_divergences} of {} warmup transitions diverged (final step size {eps:.3e})",
            cfg.warmup
        )));
    }
    eps = da.final_step();

    let mut out = ChainDraws {
        draws: Vec::with_capacity(cfg.keep),
        accept_stat: Vec::with_capacity(cfg.keep),
        divergent: Vec::with_capacity(cfg.keep),
        tree_depth: Vec::with_capacity(cfg.keep),
        n_leapfrog: Vec::with_capacity(cfg.keep),
        pointwise: Vec::new(),
        step_size: eps,
        inv_metric: inv_metric.clone(),
        warmup_divergences,
    };
    for _ in 0..cfg.keep {
        let info = transition(target, &mut z, eps, &inv_metric, cfg.max_tree_depth, &mut rng);
        out.draws.push(target.record(&z.q));
        if let Some(pw) = target.pointwise(&z.q) {
            out.pointwise.push(pw);
        }
        out.accept_stat.push(info.accept_stat);
        out.divergent.push(info.divergent);
        out.tree_depth.push(info.depth);
        out.n_leapfrog.push(info.n_leapfrog);
    }
    Ok(out)
}

/// Runs `cfg.chains` independent chains (in parallel on the current rayon
/// pool). Each chain's RNG stream is derived from `(cfg.seed, chain)`, so
/// the output does not depend on scheduling.
pub fn run_chains<T: Target + ?Sized>(target: &T, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let chains = (0..cfg.chains).into_par_iter().map(|c| run_chain(target, cfg, c)).collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws { names: target.names(), chains })
}

#[cfg(test)]
mod tests;
