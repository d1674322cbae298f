//! Replication metrics: bias and coverage of posterior summaries, survival
//! PSIS-LOO, and comparison across approaches.

mod psis;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::PosteriorDraws;
use crate::stats::quantile;

pub use psis::{
    compare_models, gpd_fit, gpd_fit_raw, psis_loo, psis_smooth, ComparisonReport, LooResult, LooStatus,
    PairwiseComparison, K_UNRELIABLE, K_WARN,
};

/// Posterior mean and equal-tailed 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ParamSummary {
    pub fn from_draws(draws: &[f64]) -> Result<Self> {
        if draws.is_empty() || draws.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("posterior summary needs finite draws"));
        }
        let mut s = draws.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(Self {
            mean: draws.iter().sum::<f64>() / draws.len() as f64,
            lower: quantile(&s, 0.025),
            upper: quantile(&s, 0.975),
        })
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.lower <= truth && truth <= self.upper
    }
}

/// Summary of one fit within a replication study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replicate: u64,
    pub approach: String,
    pub params: BTreeMap<String, ParamSummary>,
    pub looic: Option<f64>,
    pub looic_se: Option<f64>,
    pub max_pareto_k: Option<f64>,
}

impl ReplicationResult {
    /// Summaries of `tracked` parameters from pooled draws, with the LOO result if given.
    pub fn from_draws(
        replicate: u64,
        approach: &str,
        draws: &PosteriorDraws,
        tracked: &[String],
        loo: Option<&LooResult>,
    ) -> Result<Self> {
        let mut params = BTreeMap::new();
        for name in tracked {
            let j = draws.index_of(name).ok_or_else(|| Error::argument(format!("no draws recorded for {name}")))?;
            let pooled: Vec<f64> = draws.column(j).concat();
            params.insert(name.clone(), ParamSummary::from_draws(&pooled)?);
        }
        Ok(Self {
            replicate,
            approach: approach.to_string(),
            params,
            looic: loo.map(|l| l.looic),
            looic_se: loo.map(|l| l.se_looic),
            max_pareto_k: loo.map(LooResult::max_pareto_k),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCpRow {
    pub approach: String,
    pub parameter: String,
    pub truth: f64,
    /// Mean of posterior mean − truth.
    pub bias: f64,
    /// Percentage of replicates whose interval contains the truth.
    pub cp: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCpTable {
    pub rows: Vec<BiasCpRow>,
}

impl BiasCpTable {
    pub fn get(&self, approach: &str, parameter: &str) -> Option<&BiasCpRow> {
        self.rows.iter().find(|r| r.approach == approach && r.parameter == parameter)
    }

    pub fn approaches(&self) -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        for r in &self.rows {
            if !v.contains(&r.approach) {
                v.push(r.approach.clone());
            }
        }
        v
    }

    /// Wide layout: one row per parameter, `bias`, `cp` and replicate count per approach.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let approaches = self.approaches();
        let mut params: Vec<(String, f64)> = Vec::new();
        for r in &self.rows {
            if !params.iter().any(|p| p.0 == r.parameter) {
                params.push((r.parameter.clone(), r.truth));
            }
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["parameter".to_string(), "truth".into()];
        for a in &approaches {
            header.extend([format!("{a}_bias"), format!("{a}_cp"), format!("{a}_replicates")]);
        }
        w.write_record(&header)?;
        for (p, truth) in &params {
            let mut rec = vec![p.clone(), crate::data::fmt_f64(*truth)];
            for a in &approaches {
                match self.get(a, p) {
                    Some(r) => rec.extend([format!("{:.4}", r.bias), format!("{:.1}", r.cp), r.replicates.to_string()]),
                    None => rec.extend([String::new(), String::new(), "0".into()]),
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bias and coverage per approach and parameter of `truth`. Every result must
/// summarise every parameter in `truth`.
pub fn bias_cp_table(results: &[ReplicationResult], truth: &BTreeMap<String, f64>) -> Result<BiasCpTable> {
    if results.is_empty() {
        return Err(Error::argument("bias/coverage table needs at least one replicate"));
    }
    let mut by_approach: BTreeMap<&str, Vec<&ReplicationResult>> = BTreeMap::new();
    for r in results {
        for name in truth.keys() {
            if !r.params.contains_key(name) {
                return Err(Error::argument(format!(
                    "replicate {} of {} has no summary for {name}",
                    r.replicate, r.approach
                )));
            }
        }
        by_approach.entry(r.approach.as_str()).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (approach, reps) in by_approach {
        for (name, &t) in truth {
            let n = reps.len() as f64;
            let bias = reps.iter().map(|r| r.params[name].mean - t).sum::<f64>() / n;
            let cp = 100.0 * reps.iter().filter(|r| r.params[name].covers(t)).count() as f64 / n;
            rows.push(BiasCpRow {
                approach: approach.to_string(),
                parameter: name.clone(),
                truth: t,
                bias,
                cp,
                replicates: reps.len(),
            });
        }
    }
    Ok(BiasCpTable { rows })
}

/// Long format `replicate,approach,looic,se,max_pareto_k` for boxplots.
pub fn write_looic_csv<W: Write>(results: &[ReplicationResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replicate", "approach", "looic", "se", "max_pareto_k"])?;
    for r in results {
        if let Some(l) = r.looic {
            let opt = |v: Option<f64>| v.map(crate::data::fmt_f64).unwrap_or_default();
            w.write_record([
                r.replicate.to_string(),
                r.approach.clone(),
                crate::data::fmt_f64(l),
                opt(r.looic_se),
                opt(r.max_pareto_k),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Median LOOIC per approach over the results that carry one.
pub fn median_looic(results: &[ReplicationResult]) -> BTreeMap<String, f64> {
    let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in results {
        if let Some(l) = r.looic {
            by.entry(r.approach.clone()).or_default().push(l);
        }
    }
    by.into_iter()
        .map(|(a, v)| (a, crate::stats::median(&v)))
        .collect()
}
