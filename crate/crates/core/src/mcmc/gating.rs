//! Updates of the gating coefficients given allocations: random-walk
//! Metropolis-Hastings, and the differenced random-utility representation
//! with either an MH step or auxiliary-mixture Gibbs step.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use super::prior::GatingPrior;
use super::scale_mixture::{ScaleMixture, MIXTURE_COMPONENTS};
use crate::error::{MoeError, Result};
use crate::model::Gating;
use crate::stats::{self, logsumexp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatingSampler {
    Mh,
    DrumMh,
    DrumAux,
}

impl GatingSampler {
    pub fn name(self) -> &'static str {
        match self {
            GatingSampler::Mh => "mh",
            GatingSampler::DrumMh => "drum-mh",
            GatingSampler::DrumAux => "drum-aux",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "mh" => Some(GatingSampler::Mh),
            "drum-mh" => Some(GatingSampler::DrumMh),
            "drum-aux" => Some(GatingSampler::DrumAux),
            _ => None,
        }
    }
}

/// Σ_i log η_{z_i}(x̃_i).
pub fn allocation_loglik(coef: &DMatrix<f64>, design: &DMatrix<f64>, z: &[usize]) -> f64 {
    let g_count = coef.nrows();
    let mut lin = vec![0.0; g_count];
    let mut total = 0.0;
    for (i, &zi) in z.iter().enumerate() {
        let x = design.row(i);
        for g in 0..g_count {
            lin[g] = (x * coef.row(g).transpose())[0];
        }
        total += lin[zi] - logsumexp(&lin);
    }
    total
}

/// Random-walk proposal N(γ_g, scale_g · base) for each non-baseline component.
#[derive(Debug, Clone)]
pub struct MhProposal {
    pub base_chol: Cholesky<f64, Dyn>,
    pub scales: Vec<f64>,
}

impl MhProposal {
    /// base = (XᵀX)⁻¹ (ridged if singular), initial scale 4·2.38²/(q+1).
    pub fn default_for(design: &DMatrix<f64>, g_count: usize) -> Result<Self> {
        let p = design.ncols();
        let mut xtx = design.transpose() * design;
        let ridge = 1e-8 * (xtx.trace() / p as f64).max(1.0);
        for k in 0..p {
            xtx[(k, k)] += ridge;
        }
        let base = stats::symmetrize(stats::cholesky(&xtx, "design cross-product")?.inverse());
        Ok(MhProposal {
            base_chol: stats::cholesky(&base, "proposal covariance")?,
            scales: vec![4.0 * 2.38 * 2.38 / p as f64; g_count],
        })
    }
}

/// Per-component MH step targeting p(z | γ, x) p(γ_g); returns acceptance flags for g = 1..G−1.
pub fn mh_update_gamma<R: Rng + ?Sized>(
    gating: &Gating,
    z: &[usize],
    design: &DMatrix<f64>,
    prior: &GatingPrior,
    proposal: &MhProposal,
    rng: &mut R,
) -> Result<(Gating, Vec<bool>)> {
    let g_count = gating.components();
    let prior_chol = stats::cholesky(&prior.cov, "gating prior covariance")?;
    let mut coef = gating.coef().clone();
    let mut current = allocation_loglik(&coef, design, z);
    let mut flags = Vec::with_capacity(g_count.saturating_sub(1));
    for g in 1..g_count {
        let old = coef.row(g).transpose();
        let step = proposal.base_chol.l() * stats::std_normal_vec(old.len(), rng) * proposal.scales[g].sqrt();
        let cand = &old + step;
        coef.set_row(g, &cand.transpose());
        let proposed = allocation_loglik(&coef, design, z);
        let log_ratio = proposed + stats::mvn_logpdf_chol(&cand, &prior.mean, &prior_chol)
            - current
            - stats::mvn_logpdf_chol(&old, &prior.mean, &prior_chol);
        let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
        if accept {
            current = proposed;
        } else {
            coef.set_row(g, &old.transpose());
        }
        flags.push(accept);
    }
    Ok((Gating::new(coef)?, flags))
}

/// Latent utilities u_gi and auxiliary-mixture indicators r_gi (columns g = 1..G−1).
#[derive(Debug, Clone, PartialEq)]
pub struct DrumState {
    pub u: DMatrix<f64>,
    /// exp(x̃_i γ_g), with the baseline column fixed at 1.
    pub lambda: DMatrix<f64>,
    pub r: Option<DMatrix<usize>>,
}

/// Gaussian conditional N(mean, cov) of one γ_g used in an update.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaConditional {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// One utility draw: u = log(λ U + D) − log(1 − U + λ(1 − D)) with λ = exp(m),
/// i.e. m plus a logistic error truncated to agree with D.
pub fn sample_utility<R: Rng + ?Sized>(m: f64, d: bool, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    if d {
        // log(1 + λU) − log(1 − U)
        log_add_exp(0.0, m + u.ln()) - (-u).ln_1p()
    } else {
        // log(λU) − log(1 − U + λ)
        m + u.ln() - log_add_exp((1.0 - u).ln(), m)
    }
}

fn logistic_logpdf(e: f64) -> f64 {
    -e.abs() - 2.0 * (-e.abs()).exp().ln_1p()
}

/// Log of Σ_{h≠g} exp(x̃_i γ_h) for every i.
fn log_lambda_rest(coef: &DMatrix<f64>, design: &DMatrix<f64>, g: usize) -> Vec<f64> {
    let g_count = coef.nrows();
    (0..design.nrows())
        .map(|i| {
            let x = design.row(i);
            let lin: Vec<f64> = (0..g_count)
                .filter(|&h| h != g)
                .map(|h| (x * coef.row(h).transpose())[0])
                .collect();
            logsumexp(&lin)
        })
        .collect()
}

/// Weighted Gaussian regression posterior for y = Xγ + e, e_i ~ N(0, v_i), γ ~ prior.
pub fn gaussian_regression_posterior(
    design: &DMatrix<f64>,
    y: &[f64],
    var: &[f64],
    prior: &GatingPrior,
) -> Result<GammaConditional> {
    let p = design.ncols();
    let prior_prec = stats::cholesky(&prior.cov, "gating prior covariance")?.inverse();
    let mut prec = prior_prec.clone();
    let mut rhs = &prior_prec * &prior.mean;
    for i in 0..design.nrows() {
        let x = design.row(i).transpose();
        prec += &x * x.transpose() / var[i];
        rhs += &x * (y[i] / var[i]);
    }
    let cov = stats::symmetrize(stats::cholesky(&prec, "gating posterior precision")?.inverse());
    let mean = &cov * rhs;
    debug_assert_eq!(mean.len(), p);
    Ok(GammaConditional { mean, cov })
}

fn sample_indicator<R: Rng + ?Sized>(e: f64, table: &ScaleMixture, rng: &mut R) -> usize {
    let mut lw = [0.0; MIXTURE_COMPONENTS];
    for r in 0..MIXTURE_COMPONENTS {
        let v = table.variances[r];
        lw[r] = table.weights[r].ln() - 0.5 * v.ln() - 0.5 * e * e / v;
    }
    stats::sample_log_categorical(&lw, rng).unwrap_or(0)
}

/// Data-augmented update of every γ_g (g = 1..G−1) in turn.
///
/// Utilities are drawn given the current coefficients and z. `table = None`
/// selects the MH variant, whose independence proposal is the Gaussian
/// regression obtained by replacing the logistic error with a normal of equal
/// variance; `Some(table)` selects the auxiliary-mixture Gibbs variant.
pub fn drum_update_gamma<R: Rng + ?Sized>(
    gating: &Gating,
    z: &[usize],
    design: &DMatrix<f64>,
    prior: &GatingPrior,
    table: Option<&ScaleMixture>,
    rng: &mut R,
) -> Result<(Gating, DrumState, Vec<GammaConditional>, Vec<bool>)> {
    let n = design.nrows();
    let g_count = gating.components();
    let mut coef = gating.coef().clone();
    let mut u = DMatrix::zeros(n, g_count.saturating_sub(1));
    let mut r_all = table.map(|_| DMatrix::zeros(n, g_count.saturating_sub(1)));
    let mut conds = Vec::new();
    let mut flags = Vec::new();
    let prior_chol = stats::cholesky(&prior.cov, "gating prior covariance")?;
    for g in 1..g_count {
        let rest = log_lambda_rest(&coef, design, g);
        let lin: Vec<f64> = (0..n).map(|i| (design.row(i) * coef.row(g).transpose())[0]).collect();
        // working response y_i = u_gi + log λ_{-g,i} = x̃_i γ_g + ε_gi
        let mut y = vec![0.0; n];
        for i in 0..n {
            let ui = sample_utility(lin[i] - rest[i], z[i] == g, rng);
            u[(i, g - 1)] = ui;
            y[i] = ui + rest[i];
        }
        match table {
            None => {
                let var = vec![PI * PI / 3.0; n];
                let cond = gaussian_regression_posterior(design, &y, &var, prior)?;
                let qchol = stats::cholesky(&cond.cov, "proposal covariance")?;
                let old = coef.row(g).transpose();
                let cand = stats::mvn_sample_chol(&cond.mean, &qchol, rng);
                let target = |gamma: &DVector<f64>| -> f64 {
                    let fit = design * gamma;
                    (0..n).map(|i| logistic_logpdf(y[i] - fit[i])).sum::<f64>()
                        + stats::mvn_logpdf_chol(gamma, &prior.mean, &prior_chol)
                };
                let log_ratio = target(&cand) - target(&old) + stats::mvn_logpdf_chol(&old, &cond.mean, &qchol)
                    - stats::mvn_logpdf_chol(&cand, &cond.mean, &qchol);
                let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
                if accept {
                    coef.set_row(g, &cand.transpose());
                }
                flags.push(accept);
                conds.push(cond);
            }
            Some(tab) => {
                let r = r_all.as_mut().unwrap();
                let mut var = vec![0.0; n];
                for i in 0..n {
                    let k = sample_indicator(y[i] - lin[i], tab, rng);
                    r[(i, g - 1)] = k;
                    var[i] = tab.variances[k];
                }
                let cond = gaussian_regression_posterior(design, &y, &var, prior)?;
                let gamma = stats::mvn_sample(&cond.mean, &cond.cov, rng)?;
                let fit = design * &gamma;
                for i in 0..n {
                    r[(i, g - 1)] = sample_indicator(y[i] - fit[i], tab, rng);
                }
                coef.set_row(g, &gamma.transpose());
                flags.push(true);
                conds.push(cond);
            }
        }
    }
    let lambda = DMatrix::from_fn(n, g_count, |i, g| (design.row(i) * coef.row(g).transpose())[0].exp());
    let state = DrumState { u, lambda, r: r_all };
    if state.lambda.iter().any(|v| !v.is_finite()) {
        return Err(MoeError::NonFinite);
    }
    Ok((Gating::new(coef)?, state, conds, flags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn utilities_respect_allocation_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &m in &[-40.0, -3.0, 0.0, 2.5, 40.0] {
            for _ in 0..500 {
                assert!(sample_utility(m, true, &mut rng) >= 0.0);
                assert!(sample_utility(m, false, &mut rng) < 0.0);
            }
        }
    }

    #[test]
    fn utilities_follow_truncated_logistic() {
        // P(u ≤ c | u ≥ 0) for u = m + logistic: (F(c − m) − F(−m)) / (1 − F(−m))
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, c) = (0.7, 1.5);
        let f = |x: f64| 1.0 / (1.0 + (-x).exp());
        let want = (f(c - m) - f(-m)) / (1.0 - f(-m));
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_utility(m, true, &mut rng) <= c).count() as f64 / n as f64;
        assert!((hits - want).abs() < 3.0 * (want * (1.0 - want) / n as f64).sqrt() + 1e-3);
    }

    #[test]
    fn zero_step_always_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let design = DMatrix::from_fn(20, 2, |i, c| if c == 0 { 1.0 } else { (i % 2) as f64 });
        let z: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let mut prop = MhProposal::default_for(&design, 3).unwrap();
        prop.scales = vec![0.0; 3];
        let gating = Gating::from_free_rows(&DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 0.5, 0.2])).unwrap();
        let (_, flags) = mh_update_gamma(&gating, &z, &design, &GatingPrior::standard(2), &prop, &mut rng).unwrap();
        assert!(flags.iter().all(|&f| f));
    }

    #[test]
    fn aux_conditional_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 30;
        let design = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let var: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
        let prior = GatingPrior { mean: DVector::from_vec(vec![0.5, -0.5]), cov: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]) };
        let post = gaussian_regression_posterior(&design, &y, &var, &prior).unwrap();
        // oracle: stacked weighted least squares with prior as pseudo-observations
        let w = DMatrix::from_diagonal(&DVector::from_iterator(n, var.iter().map(|v| 1.0 / v)));
        let pinv = prior.cov.clone().try_inverse().unwrap();
        let prec = design.transpose() * &w * &design + &pinv;
        let cov = prec.try_inverse().unwrap();
        let mean = &cov * (design.transpose() * &w * DVector::from_vec(y) + &pinv * &prior.mean);
        assert!((post.mean - mean).amax() < 1e-10);
        assert!((post.cov - cov).amax() < 1e-10);
    }
}
