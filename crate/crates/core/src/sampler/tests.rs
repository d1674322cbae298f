use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use super::*;
use crate::stats::ks_test;

struct StdNormal(usize);

impl Target for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        for (g, v) in grad.iter_mut().zip(x) {
            *g = -v;
        }
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Zero-mean Gaussian with unit variances and correlation `rho`.
struct Correlated(f64);

impl Target for Correlated {
    fn dim(&self) -> usize {
        2
    }
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let r = self.0;
        let det = 1.0 - r * r;
        grad[0] = -(x[0] - r * x[1]) / det;
        grad[1] = -(x[1] - r * x[0]) / det;
        -0.5 * (x[0] * x[0] - 2.0 * r * x[0] * x[1] + x[1] * x[1]) / det
    }
}

/// Scaled normal with a different scale per coordinate.
struct Scaled(Vec<f64>);

impl Target for Scaled {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for ((g, v), s) in grad.iter_mut().zip(x).zip(&self.0) {
            *g = -v / (s * s);
            lp -= 0.5 * v * v / (s * s);
        }
        lp
    }
}

#[test]
fn standard_normal_50d_is_recovered() {
    // the variance estimate of x² has ESS ≈ 0.4·S under NUTS, so 10% on all 50
    // coordinates needs around 10⁴ draws
    let cfg = SamplerConfig { chains: 4, warmup: 1000, keep: 2500, seed: 11, ..Default::default() };
    let draws = run_chains(&StdNormal(50), &cfg).unwrap();
    let report = draws.diagnostics().unwrap();
    for p in &report.params {
        assert!(p.mean.abs() <= 4.0 * p.mcse_mean, "{}: mean {} mcse {}", p.name, p.mean, p.mcse_mean);
        assert!((p.sd * p.sd - 1.0).abs() <= 0.10, "{}: var {}", p.name, p.sd * p.sd);
        assert!(p.rhat < 1.01);
    }
    assert!(draws.divergence_rate() <= 0.01);
}

#[test]
fn correlated_gaussian_covariance() {
    let cfg = SamplerConfig { chains: 4, warmup: 1000, keep: 2000, seed: 5, ..Default::default() };
    let draws = run_chains(&Correlated(0.9), &cfg).unwrap();
    let all: Vec<&Vec<f64>> = draws.chains.iter().flat_map(|c| &c.draws).collect();
    let n = all.len() as f64;
    let m0 = all.iter().map(|d| d[0]).sum::<f64>() / n;
    let m1 = all.iter().map(|d| d[1]).sum::<f64>() / n;
    let c = |a: usize, b: usize, ma: f64, mb: f64| all.iter().map(|d| (d[a] - ma) * (d[b] - mb)).sum::<f64>() / (n - 1.0);
    let (v0, v1, c01) = (c(0, 0, m0, m0), c(1, 1, m1, m1), c(0, 1, m0, m1));
    assert!((v0 - 1.0).abs() < 0.1 && (v1 - 1.0).abs() < 0.1, "{v0} {v1}");
    assert!((c01 - 0.9).abs() < 0.09, "{c01}");
}

#[test]
fn metric_adapts_to_scales() {
    let scales = vec![0.01, 1.0, 100.0];
    let cfg = SamplerConfig { chains: 1, warmup: 1000, keep: 500, seed: 3, ..Default::default() };
    let draws = run_chains(&Scaled(scales.clone()), &cfg).unwrap();
    for (m, s) in draws.chains[0].inv_metric.iter().zip(&scales) {
        let ratio = m / (s * s);
        assert!(ratio > 0.5 && ratio < 2.0, "{ratio}");
    }
    // adapted metric keeps trajectories short
    let mean_depth = draws.chains[0].tree_depth.iter().sum::<u32>() as f64 / 500.0;
    assert!(mean_depth < 4.0);
}

#[test]
fn one_dimensional_normal_passes_ks() {
    let cfg = SamplerConfig { chains: 1, warmup: 500, keep: 2000, seed: 21, ..Default::default() };
    let draws = run_chains(&StdNormal(1), &cfg).unwrap();
    let x: Vec<f64> = draws.column(0).concat();
    let norm = Normal::new(0.0, 1.0).unwrap();
    let (_, p) = ks_test(&x, |v| norm.cdf(v)).unwrap();
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn fixed_seed_is_reproducible() {
    let cfg = SamplerConfig { chains: 2, warmup: 200, keep: 200, seed: 9, ..Default::default() };
    let a = run_chains(&Correlated(0.5), &cfg).unwrap();
    let b = run_chains(&Correlated(0.5), &cfg).unwrap();
    assert_eq!(a, b);
    let c = run_chains(&Correlated(0.5), &SamplerConfig { seed: 10, ..cfg.clone() }).unwrap();
    assert_ne!(a.chains[0].draws, c.chains[0].draws);
    assert_ne!(a.chains[0].draws, a.chains[1].draws);
}

/// Finite only on a fine interleaved set of cells.
struct Shattered;

impl Target for Shattered {
    fn dim(&self) -> usize {
        1
    }
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad[0] = -x[0];
        if ((x[0] * 1e6).floor() as i64).rem_euclid(2) == 1 {
            f64::NEG_INFINITY
        } else {
            -0.5 * x[0] * x[0]
        }
    }
    fn initial_point(&self, _seed: u64) -> Vec<f64> {
        vec![0.0]
    }
}

#[test]
fn persistent_divergence_is_a_fit_failure() {
    let cfg = SamplerConfig { chains: 1, warmup: 100, keep: 10, seed: 1, ..Default::default() };
    assert!(matches!(run_chains(&Shattered, &cfg), Err(Error::FitFailure(_))));
}

struct NeverFinite;

impl Target for NeverFinite {
    fn dim(&self) -> usize {
        3
    }
    fn log_density_and_grad(&self, _x: &[f64], _grad: &mut [f64]) -> f64 {
        f64::NEG_INFINITY
    }
}

#[test]
fn initialization_retries_then_fails() {
    assert!(matches!(initialize(&NeverFinite, 1), Err(Error::FitFailure(_))));
    let a = initialize(&StdNormal(4), 8).unwrap();
    assert_eq!(a, initialize(&StdNormal(4), 8).unwrap());
    assert!(a.iter().all(|v| v.abs() < 2.0));
}

#[test]
fn config_validation() {
    assert!(SamplerConfig::default().validate().is_ok());
    assert!(SamplerConfig { target_accept: 1.0, ..Default::default() }.validate().is_err());
    assert!(SamplerConfig { keep: 0, ..Default::default() }.validate().is_err());
}

#[test]
fn derived_seeds_differ() {
    let seeds: std::collections::HashSet<u64> = (0..1000).map(|k| derive_seed(42, k)).collect();
    assert_eq!(seeds.len(), 1000);
    let _ = ChaCha8Rng::seed_from_u64(derive_seed(0, 0));
}
