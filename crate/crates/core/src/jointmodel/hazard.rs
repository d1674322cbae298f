use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splinecore::KnotConfig;

pub const DEFAULT_QUADRATURE_NODES: usize = 15;

/// Baseline hazard family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HazardKind {
    /// `log h₀(t) = b + log a + (a − 1) log t`
    Weibull,
    /// `log h₀(t) = Σ c_k B_k(t)`
    SplineLogHazard { cfg: KnotConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardSpec {
    pub kind: HazardKind,
    pub quadrature_nodes: usize,
}

impl HazardSpec {
    pub fn weibull() -> Self {
        Self { kind: HazardKind::Weibull, quadrature_nodes: DEFAULT_QUADRATURE_NODES }
    }

    /// Cubic log-hazard spline on `[0, t_max]` with one interior knot at the
    /// median of the observed event times.
    pub fn spline_at_median(event_times: &[f64], t_max: f64) -> Result<Self> {
        if event_times.is_empty() {
            return Err(Error::data("spline baseline hazard needs at least one observed event"));
        }
        let mut e = event_times.to_vec();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = e.len();
        let median = if n % 2 == 1 { e[n / 2] } else { 0.5 * (e[n / 2 - 1] + e[n / 2]) };
        let (lo, hi) = KnotConfig::padded_range(0.0, t_max);
        let cfg = KnotConfig::new(3, vec![median], lo, hi)?;
        Ok(Self { kind: HazardKind::SplineLogHazard { cfg }, quadrature_nodes: DEFAULT_QUADRATURE_NODES })
    }

    pub fn validate(&self) -> Result<()> {
        if self.quadrature_nodes < 7 {
            return Err(Error::argument(format!(
                "at least 7 quadrature nodes required, got {}",
                self.quadrature_nodes
            )));
        }
        Ok(())
    }

    /// Number of baseline-hazard parameters.
    pub fn dim(&self) -> usize {
        match &self.kind {
            HazardKind::Weibull => 2,
            HazardKind::SplineLogHazard { cfg } => cfg.n_basis(),
        }
    }

    pub fn names(&self) -> Vec<String> {
        match &self.kind {
            HazardKind::Weibull => vec!["weibull_shape".into(), "weibull_log_scale".into()],
            HazardKind::SplineLogHazard { cfg } => (1..=cfg.n_basis()).map(|k| format!("h0_coef[{k}]")).collect(),
        }
    }
}

/// Baseline hazard parameters on their natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HazardParams {
    Weibull { shape: f64, log_scale: f64 },
    Spline { coef: Vec<f64> },
}

impl HazardParams {
    pub fn log_h0(&self, spec: &HazardSpec, t: f64) -> Result<f64> {
        match (self, &spec.kind) {
            (HazardParams::Weibull { shape, log_scale }, HazardKind::Weibull) => {
                Ok(log_scale + shape.ln() + (shape - 1.0) * t.ln())
            }
            (HazardParams::Spline { coef }, HazardKind::SplineLogHazard { cfg }) => {
                let (first, vals) = cfg.eval_nonzero(t, 0)?;
                Ok(vals.iter().enumerate().map(|(k, v)| v * coef[first + k]).sum())
            }
            _ => Err(Error::argument("hazard parameters do not match the hazard kind")),
        }
    }

    /// Natural-scale values in the order of [`HazardSpec::names`].
    pub fn values(&self) -> Vec<f64> {
        match self {
            HazardParams::Weibull { shape, log_scale } => vec![*shape, *log_scale],
            HazardParams::Spline { coef } => coef.clone(),
        }
    }
}
