//! Fit configuration read from TOML, with every field defaulted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jointmodel::{PriorConfig, DEFAULT_QUADRATURE_NODES};
use crate::sampler::SamplerConfig;
use crate::trajectory::{Representation, WivKind, WivSpec, DEFAULT_WINDOW};

/// Interior-knot rule for the regression-spline representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RsplineKnots {
    /// One knot at the midpoint of the follow-up period.
    Midpoint,
    /// Knots at the 25/50/75% quantiles of the pooled visit times.
    Quantiles3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineHazard {
    Weibull,
    /// Cubic log-hazard spline with one interior knot at the median event time.
    Spline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub rspline_knots: RsplineKnots,
    /// Explicit interior knots for the regression spline; overrides `rspline_knots`.
    pub rspline_interior: Option<Vec<f64>>,
    /// Cubic B-spline functions for the population mean (P-spline, FPCA, SMRE).
    pub mean_basis: usize,
    /// Raw functions `K₀` before orthogonalisation of the subject P-spline.
    pub ortho_basis: usize,
    pub ortho_grid: usize,
    pub ortho_pve: f64,
    pub fpca_grid: usize,
    pub fpca_pve: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            rspline_knots: RsplineKnots::Midpoint,
            rspline_interior: None,
            mean_basis: 13,
            ortho_basis: 40,
            ortho_grid: crate::splinecore::DEFAULT_ORTHO_GRID,
            ortho_pve: 0.999,
            fpca_grid: crate::fpca::DEFAULT_COV_GRID,
            fpca_pve: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub representation: Representation,
    pub wiv: WivKind,
    /// Window length for `wiv = "windowed"`.
    pub window: f64,
    pub hazard: BaselineHazard,
    pub quadrature_nodes: usize,
    pub basis: BasisConfig,
    pub priors: PriorConfig,
    pub sampler: SamplerConfig,
    /// Parameters whose R-hat decides convergence. Empty means the survival
    /// coefficients, associations, longitudinal covariate effects and `sigma_e2`.
    pub key_parameters: Vec<String>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            representation: Representation::Pspline,
            wiv: WivKind::Current,
            window: DEFAULT_WINDOW,
            hazard: BaselineHazard::Weibull,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
            basis: BasisConfig::default(),
            priors: PriorConfig::default(),
            sampler: SamplerConfig::default(),
            key_parameters: Vec::new(),
        }
    }
}

impl FitConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn wiv_spec(&self) -> Result<WivSpec> {
        match self.wiv {
            WivKind::Current => Ok(WivSpec::current()),
            WivKind::Cumulative => Ok(WivSpec::cumulative()),
            WivKind::Windowed => WivSpec::windowed(self.window).map_err(|e| Error::config(e.to_string())),
        }
    }

    /// Short label such as `pspline` or `rspline-quantiles3`.
    pub fn approach_label(&self) -> String {
        match (self.representation, &self.basis.rspline_interior) {
            (Representation::Rspline, Some(_)) => "rspline-custom".into(),
            (Representation::Rspline, None) => match self.basis.rspline_knots {
                RsplineKnots::Midpoint => "rspline-midpoint".into(),
                RsplineKnots::Quantiles3 => "rspline-quantiles3".into(),
            },
            (r, _) => r.label().into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.wiv_spec()?;
        let b = &self.basis;
        if b.mean_basis < 4 {
            return Err(Error::config("basis.mean_basis must be at least 4"));
        }
        if b.ortho_basis < 10 || b.ortho_grid < 10 * b.ortho_basis {
            return Err(Error::config("basis.ortho_basis must be ≥ 10 with ortho_grid ≥ 10·ortho_basis"));
        }
        for (name, v) in [("basis.ortho_pve", b.ortho_pve), ("basis.fpca_pve", b.fpca_pve)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if b.fpca_grid < 5 {
            return Err(Error::config("basis.fpca_grid must be at least 5"));
        }
        if self.quadrature_nodes < 7 {
            return Err(Error::config("quadrature_nodes must be at least 7"));
        }
        if let Some(k) = &b.rspline_interior {
            if k.windows(2).any(|w| w[0] >= w[1]) || k.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("basis.rspline_interior must be finite and strictly increasing"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = FitConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, FitConfig::default());
        assert_eq!(cfg.sampler.warmup, 1000);
        assert_eq!(cfg.basis.ortho_basis, 40);
    }

    #[test]
    fn round_trip_through_toml() {
        let mut cfg = FitConfig::default();
        cfg.representation = Representation::Rspline;
        cfg.basis.rspline_knots = RsplineKnots::Quantiles3;
        cfg.wiv = WivKind::Windowed;
        cfg.window = 2.0;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(FitConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(cfg.approach_label(), "rspline-quantiles3");
    }

    #[test]
    fn unknown_keys_are_reported_with_location() {
        let err = FitConfig::from_toml_str("representation = \"fpca\"\n\n[basis]\nmean_basiss = 12\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("mean_basiss") && msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(FitConfig::from_toml_str("representation = \"bogus\"").is_err());
        assert!(FitConfig::from_toml_str("[basis]\nfpca_pve = 1.5").is_err());
        assert!(FitConfig::from_toml_str("wiv = \"windowed\"\nwindow = -1.0").is_err());
        assert!(FitConfig::from_toml_str("[sampler]\nchains = 0").is_err());
    }
}
