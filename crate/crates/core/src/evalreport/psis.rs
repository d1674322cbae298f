//! Pareto-smoothed importance sampling and leave-one-out for the survival
//! log-likelihood.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SubjectId;
use crate::error::{Error, Result};

/// Pareto-k above which a subject's estimate is flagged.
pub const K_WARN: f64 = 0.7;
/// Pareto-k at or above which the estimate is unreliable.
pub const K_UNRELIABLE: f64 = 1.0;
/// Minimum tail length for a Pareto fit.
const MIN_TAIL: usize = 5;

/// Generalized Pareto fit `(k, σ)` by the profile-posterior method of Zhang
/// and Stephens, with the usual weak shrinkage of `k` toward 0.5.
pub fn gpd_fit(x: &[f64]) -> (f64, f64) {
    let (k, sigma) = gpd_fit_raw(x);
    let n = x.len() as f64;
    ((n * k + 10.0 * 0.5) / (n + 10.0), sigma)
}

/// Zhang–Stephens estimate without the prior adjustment on `k`. `x` must be
/// non-negative; it is sorted internally.
pub fn gpd_fit_raw(x: &[f64]) -> (f64, f64) {
    let mut x = x.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let nf = n as f64;
    let m = 30 + (nf.sqrt() as usize);
    let quart = x[((nf / 4.0 + 0.5).floor() as usize).saturating_sub(1).min(n - 1)];
    let xmax = x[n - 1];
    let prior = 3.0;
    let bs: Vec<f64> = (1..=m)
        .map(|j| (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / (prior * quart) + 1.0 / xmax)
        .collect();
    let ks: Vec<f64> = bs.iter().map(|b| x.iter().map(|xi| (-b * xi).ln_1p()).sum::<f64>() / nf).collect();
    let ls: Vec<f64> = bs.iter().zip(&ks).map(|(b, k)| nf * ((-b / k).ln() - k - 1.0)).collect();
    let w: Vec<f64> = ls.iter().map(|lj| 1.0 / ls.iter().map(|li| (li - lj).exp()).sum::<f64>()).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for (b, wj) in bs.iter().zip(&w) {
        if wj.is_finite() && *wj >= 10.0 * f64::EPSILON {
            num += b * wj;
            den += wj;
        }
    }
    let b = num / den;
    let k = x.iter().map(|xi| (-b * xi).ln_1p()).sum::<f64>() / nf;
    (k, -k / b)
}

/// Quantile function of the generalized Pareto distribution.
fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * ((-k * (-p).ln_1p()).exp_m1()) / k
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Smooths log importance ratios in place and normalizes them to sum to one
/// on the exponential scale. Returns the Pareto-k estimate: infinite when the
/// tail is too short to fit, zero when the tail is flat.
pub fn psis_smooth(log_ratios: &mut [f64]) -> f64 {
    let s = log_ratios.len();
    let tail_len = ((0.2 * s as f64).min(3.0 * (s as f64).sqrt())).ceil() as usize;
    let mut khat = f64::INFINITY;
    if tail_len >= MIN_TAIL && tail_len < s {
        let lmax = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| log_ratios[a].total_cmp(&log_ratios[b]));
        let tail = &order[s - tail_len..];
        let cutoff = log_ratios[order[s - tail_len - 1]];
        let exp_cut = (cutoff - lmax).exp();
        let x: Vec<f64> = tail.iter().map(|&i| (log_ratios[i] - lmax).exp() - exp_cut).collect();
        if x.iter().all(|v| *v <= 0.0) || x[tail_len - 1] <= x[0] {
            khat = 0.0;
        } else {
            let (k, sigma) = gpd_fit(&x);
            khat = k;
            if k.is_finite() {
                for (j, &i) in tail.iter().enumerate() {
                    let p = (j as f64 + 0.5) / tail_len as f64;
                    let v = (gpd_quantile(p, k, sigma) + exp_cut).ln() + lmax;
                    log_ratios[i] = v.min(lmax);
                }
            }
        }
    }
    let z = log_sum_exp(log_ratios);
    for v in log_ratios.iter_mut() {
        *v -= z;
    }
    khat
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LooStatus {
    Ok,
    /// Some `k̂ > 0.7`.
    Warn,
    /// Some `k̂ ≥ 1`.
    Unreliable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub subjects: Vec<SubjectId>,
    pub elpd_loo: f64,
    pub se_elpd: f64,
    pub looic: f64,
    pub se_looic: f64,
    /// In-sample `Σ log mean exp(loglik)`.
    pub lpd: f64,
    pub p_loo: f64,
    pub pointwise_elpd: Vec<f64>,
    pub pareto_k: Vec<f64>,
    pub status: LooStatus,
}

impl LooResult {
    pub fn max_pareto_k(&self) -> f64 {
        self.pareto_k.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn sample_var(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / n as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// PSIS-LOO from a draws × subjects log-likelihood matrix (rows of all chains
/// concatenated).
pub fn psis_loo(rows: &[Vec<f64>], subjects: &[SubjectId]) -> Result<LooResult> {
    let s = rows.len();
    if s == 0 {
        return Err(Error::argument("PSIS-LOO needs at least one draw"));
    }
    let n = subjects.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::argument(format!("every draw must hold {n} pointwise values")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::argument("pointwise log-likelihood contains non-finite values"));
    }
    let per_subject: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ll: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            let mut lw: Vec<f64> = ll.iter().map(|v| -v).collect();
            let k = psis_smooth(&mut lw);
            let terms: Vec<f64> = lw.iter().zip(&ll).map(|(w, l)| w + l).collect();
            let elpd = log_sum_exp(&terms);
            let lpd = log_sum_exp(&ll) - (s as f64).ln();
            (elpd, lpd, k)
        })
        .collect();
    let pointwise_elpd: Vec<f64> = per_subject.iter().map(|p| p.0).collect();
    let pareto_k: Vec<f64> = per_subject.iter().map(|p| p.2).collect();
    let elpd_loo: f64 = pointwise_elpd.iter().sum();
    let lpd: f64 = per_subject.iter().map(|p| p.1).sum();
    let se_elpd = (n as f64 * sample_var(&pointwise_elpd)).sqrt();
    let kmax = pareto_k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let status = if kmax >= K_UNRELIABLE {
        LooStatus::Unreliable
    } else if kmax > K_WARN {
        LooStatus::Warn
    } else {
        LooStatus::Ok
    };
    Ok(LooResult {
        subjects: subjects.to_vec(),
        elpd_loo,
        se_elpd,
        looic: -2.0 * elpd_loo,
        se_looic: 2.0 * se_elpd,
        lpd,
        p_loo: lpd - elpd_loo,
        pointwise_elpd,
        pareto_k,
        status,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub first: String,
    pub second: String,
    /// `looic(first) − looic(second)`; negative favours `first`.
    pub looic_diff: f64,
    pub se: f64,
    /// `looic_diff / se`, zero when both vanish.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Labels from best (lowest LOOIC) to worst.
    pub ranking: Vec<String>,
    pub pairs: Vec<PairwiseComparison>,
}

/// Pairwise LOOIC differences with paired standard errors.
pub fn compare_models(models: &[(String, LooResult)]) -> Result<ComparisonReport> {
    if let Some((_, first)) = models.first() {
        if let Some((label, _)) = models.iter().find(|(_, m)| m.subjects != first.subjects) {
            return Err(Error::argument(format!("model {label} was evaluated on a different subject set")));
        }
    }
    let mut ranking: Vec<(String, f64)> = models.iter().map(|(l, m)| (l.clone(), m.looic)).collect();
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut pairs = Vec::new();
    for (a, (la, ma)) in models.iter().enumerate() {
        for (lb, mb) in &models[a + 1..] {
            let diff: Vec<f64> =
                ma.pointwise_elpd.iter().zip(&mb.pointwise_elpd).map(|(x, y)| -2.0 * (x - y)).collect();
            let looic_diff: f64 = diff.iter().sum();
            let se = (diff.len() as f64 * sample_var(&diff)).sqrt();
            let z = if se > 0.0 { looic_diff / se } else { 0.0 };
            pairs.push(PairwiseComparison { first: la.clone(), second: lb.clone(), looic_diff, se, z });
        }
    }
    Ok(ComparisonReport { ranking: ranking.into_iter().map(|r| r.0).collect(), pairs })
}
