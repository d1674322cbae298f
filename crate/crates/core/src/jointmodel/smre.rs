use serde::{Deserialize, Serialize};

use super::params::ParameterVector;

/// Result of the mean-one recentring of the SMRE multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SmreOutcome {
    Applied { mean: f64 },
    /// Mean multiplier was zero or not finite: draw kept unchanged.
    Degenerate,
    NotApplicable,
}

/// Rescales `b_i2 ← b_i2 / mean(b_·2)` and the coefficients of `μ(t)` by the
/// same mean, which leaves every `b_i2 μ(t)` (hence every trajectory and
/// curvature) unchanged. The variance of `b_i2` is rescaled accordingly.
///
/// Population layout is `[β₀, β₁, μ coefficients…]` and subject layout
/// `[b_i0, b_i1, b_i2]`.
pub fn apply_smre_constraint(params: &mut ParameterVector) -> SmreOutcome {
    let n = params.subjects.len();
    if n == 0 {
        return SmreOutcome::Degenerate;
    }
    let mean = params.subjects.iter().map(|b| b[2]).sum::<f64>() / n as f64;
    if mean == 0.0 || !mean.is_finite() {
        return SmreOutcome::Degenerate;
    }
    for b in &mut params.subjects {
        b[2] /= mean;
    }
    for c in &mut params.population[2..] {
        *c *= mean;
    }
    if let Some(v) = params.re_variances.get_mut(2) {
        *v /= mean * mean;
    }
    SmreOutcome::Applied { mean }
}
