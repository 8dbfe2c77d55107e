//! Convergence and posterior summaries.

use crate::error::{MoeError, Result};
use crate::model::MeModel;
use crate::params;
use crate::stats;

/// Potential scale reduction factor of m ≥ 2 equal-length chains of a scalar.
pub fn psrf(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(MoeError::InvalidParameter("potential scale reduction needs at least two chains".into()));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 2 {
        return Err(MoeError::TooFewDraws { needed: 2, have: n });
    }
    let means: Vec<f64> = chains.iter().map(|c| stats::mean(&c[..n])).collect();
    let w = chains.iter().map(|c| stats::variance(&c[..n])).sum::<f64>() / m as f64;
    let b = n as f64 * stats::variance(&means);
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    if w <= 0.0 {
        return Ok(if b <= 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok((var_plus / w).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// Batch-means Monte Carlo standard error of the mean.
    pub mc_se: f64,
    pub hpd_lower: f64,
    pub hpd_upper: f64,
}

/// Posterior mean, standard deviation and shortest 95% interval of every free parameter.
pub fn summarize(models: &[MeModel]) -> Result<Vec<ParamSummary>> {
    let Some(first) = models.first() else {
        return Err(MoeError::TooFewDraws { needed: 1, have: 0 });
    };
    let names = params::param_names(first);
    let vecs: Vec<Vec<f64>> = models.iter().map(|m| params::to_vector(m).iter().copied().collect()).collect();
    Ok(names
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let xs: Vec<f64> = vecs.iter().map(|v| v[k]).collect();
            let (lo, hi) = stats::hpd_interval(&xs, 0.95);
            ParamSummary {
                name,
                mean: stats::mean(&xs),
                sd: stats::variance(&xs).sqrt(),
                mc_se: stats::batch_means_se(&xs),
                hpd_lower: lo,
                hpd_upper: hi,
            }
        })
        .collect())
}
