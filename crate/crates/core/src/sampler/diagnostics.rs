//! Split-R̂ and effective sample size on rank-normalized draws.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

/// Threshold above which a parameter is reported as not converged.
pub const RHAT_THRESHOLD: f64 = 1.01;

/// Convergence summary for one scalar parameter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// Rank-normalized split-R̂ (maximum of bulk and folded); `NaN` when undefined.
    pub rhat: f64,
    /// Bulk effective sample size; `NaN` when undefined.
    pub ess_bulk: f64,
    /// Effective sample size of the raw draws, used for the mean's MCSE.
    pub ess_mean: f64,
    pub mcse_mean: f64,
    /// All draws identical (or non-finite), so R̂ and ESS are undefined.
    pub degenerate: bool,
}

impl ParamDiagnostics {
    pub fn converged(&self) -> bool {
        !self.degenerate && self.rhat <= RHAT_THRESHOLD
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub params: Vec<ParamDiagnostics>,
    pub divergences: usize,
    pub n_draws: usize,
}

impl DiagnosticsReport {
    pub fn max_rhat(&self) -> f64 {
        self.params.iter().filter(|p| !p.degenerate).map(|p| p.rhat).fold(f64::NAN, f64::max)
    }

    /// Names of non-degenerate parameters with R̂ above the threshold.
    pub fn unconverged(&self) -> Vec<&str> {
        self.params.iter().filter(|p| !p.degenerate && p.rhat > RHAT_THRESHOLD).map(|p| p.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ParamDiagnostics> {
        self.params.iter().find(|p| p.name == name)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Halves every chain (dropping the middle draw of odd-length chains).
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let h = c.len() / 2;
        out.push(c[..h].to_vec());
        out.push(c[c.len() - h..].to_vec());
    }
    out
}

fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| var(c)).sum::<f64>() / chains.len() as f64;
    let b = n * var(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Normal scores of the pooled ranks (average ranks for ties).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = all.len();
    let mut idx: Vec<usize> = (0..s).collect();
    idx.sort_by(|&a, &b| all[a].total_cmp(&all[b]));
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && all[idx[j + 1]] == all[idx[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    let norm = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out = Vec::with_capacity(chains.len());
    let mut k = 0;
    for c in chains {
        out.push(
            c.iter()
                .map(|_| {
                    let z = norm.inverse_cdf((ranks[k] - 0.375) / (s as f64 + 0.25));
                    k += 1;
                    z
                })
                .collect(),
        );
    }
    out
}

fn autocov(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    (0..n).map(|t| d[..n - t].iter().zip(&d[t..]).map(|(a, b)| a * b).sum::<f64>() / n as f64).collect()
}

/// Multi-chain ESS with Geyer's initial monotone sequence.
fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let acovs: Vec<Vec<f64>> = chains.iter().map(|c| autocov(c)).collect();
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let chain_vars: Vec<f64> = acovs.iter().map(|a| a[0] * n as f64 / (n as f64 - 1.0)).collect();
    let mean_var = chain_vars.iter().sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += var(&chain_means);
    }
    let acov_at = |t: usize| acovs.iter().map(|a| a[t]).sum::<f64>() / m as f64;
    let mut rho = vec![0.0; n + 1];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = 1.0 - (mean_var - acov_at(1)) / var_plus;
    rho[1] = odd;
    let mut t = 1;
    while t + 4 < n && even + odd > 0.0 {
        even = 1.0 - (mean_var - acov_at(t + 1)) / var_plus;
        odd = 1.0 - (mean_var - acov_at(t + 2)) / var_plus;
        if even + odd >= 0.0 {
            rho[t + 1] = even;
            rho[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho[max_t] > 0.0 {
        rho[max_t + 1] = rho[max_t];
    }
    let mut t = 1;
    while t + 3 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = 0.5 * (rho[t - 1] + rho[t]);
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + rho[max_t + 1]).max(1.0 / total.log10());
    total / tau
}

/// Diagnostics for one parameter given its draws per chain.
pub fn param_diagnostics(name: &str, chains: &[Vec<f64>]) -> Result<ParamDiagnostics> {
    let n = chains.first().map_or(0, Vec::len);
    if chains.is_empty() || n < 4 {
        return Err(Error::argument(format!("{name}: diagnostics need at least 4 draws per chain")));
    }
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::argument(format!("{name}: chains have different lengths")));
    }
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    let m = mean(&all);
    let sd = var(&all).sqrt();
    let finite = all.iter().all(|v| v.is_finite());
    let constant = all.iter().all(|v| *v == all[0]);
    let split_chains = split(chains);
    let within_constant = split_chains.iter().any(|c| c.iter().all(|v| *v == c[0]));
    if !finite || constant || within_constant {
        return Ok(ParamDiagnostics {
            name: name.to_string(),
            mean: m,
            sd,
            rhat: f64::NAN,
            ess_bulk: f64::NAN,
            ess_mean: f64::NAN,
            mcse_mean: f64::NAN,
            degenerate: true,
        });
    }
    let z = rank_normalize(&split_chains);
    let rhat_bulk = rhat_basic(&z);
    let med = {
        let mut s = all.clone();
        s.sort_by(f64::total_cmp);
        let k = s.len();
        if k % 2 == 1 {
            s[k / 2]
        } else {
            0.5 * (s[k / 2 - 1] + s[k / 2])
        }
    };
    let folded: Vec<Vec<f64>> = split_chains.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let rhat_fold = rhat_basic(&rank_normalize(&folded));
    let ess_mean = ess(&split_chains);
    Ok(ParamDiagnostics {
        name: name.to_string(),
        mean: m,
        sd,
        rhat: rhat_bulk.max(rhat_fold),
        ess_bulk: ess(&z),
        ess_mean,
        mcse_mean: sd / ess_mean.sqrt(),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn independent_chains_have_unit_rhat() {
        let d = param_diagnostics("x", &[normals(1, 1000), normals(2, 1000)]).unwrap();
        assert!((0.99..=1.01).contains(&d.rhat), "{}", d.rhat);
        assert!(d.ess_bulk > 1500.0 && d.ess_bulk < 2600.0, "{}", d.ess_bulk);
    }

    #[test]
    fn shifted_chain_is_flagged() {
        let shifted: Vec<f64> = normals(2, 1000).iter().map(|v| v + 5.0).collect();
        let d = param_diagnostics("x", &[normals(1, 1000), shifted]).unwrap();
        assert!(d.rhat > 1.2);
        assert!(!d.converged());
    }

    #[test]
    fn constant_chains_are_degenerate() {
        let d = param_diagnostics("x", &[vec![3.0; 50], vec![3.0; 50]]).unwrap();
        assert!(d.degenerate && d.rhat.is_nan() && d.ess_bulk.is_nan());
    }

    #[test]
    fn too_few_draws_is_an_error() {
        assert!(matches!(param_diagnostics("x", &[vec![1.0, 2.0, 3.0]]), Err(Error::Argument(_))));
        assert!(param_diagnostics("x", &[vec![1.0, 2.0, 3.0, 4.0]]).is_ok());
    }

    #[test]
    fn ess_of_ar1_matches_theory() {
        // AR(1) with φ = 0.5: integrated autocorrelation time (1 + φ)/(1 − φ) = 3
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..5000)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x = 0.5 * x + e * (0.75f64).sqrt();
                        x
                    })
                    .collect()
            })
            .collect();
        let d = param_diagnostics("x", &chains).unwrap();
        let expect = 20000.0 / 3.0;
        assert!((d.ess_mean / expect - 1.0).abs() < 0.15, "{}", d.ess_mean);
    }
}
