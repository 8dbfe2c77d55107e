//! Model comparison: BIC, AICM, exact single-component Markov marginal
//! likelihood, and importance-sampled marginal likelihoods.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::em::FitResult;
use crate::error::{MoeError, Result};
use crate::experts::{
    markov_counts, markov_dirichlet_logpdf, BinomialExpert, Experts, GaussianExpert, History, MarkovExpert,
    RegressionExpert,
};
use crate::mcmc::{gating_relabel_map, resolve_label_switching, DrawMoments, ExpertMoments, PosteriorChain, PriorSpec};
use crate::model::{Dataset, Gating, MeModel, Outcomes, Permutation, Weights};
use crate::params;
use crate::stats::{self, ln_multi_beta, logsumexp};

/// −2·loglik + k·ln n, smaller is better.
pub fn bic(fit: &FitResult, data: &Dataset) -> Result<f64> {
    if !fit.converged {
        return Err(MoeError::InvalidParameter("BIC needs a converged fit".into()));
    }
    Ok(bic_value(fit.loglik, params::free_parameter_count(&fit.model), data.n()))
}

pub fn bic_value(loglik: f64, k: usize, n: usize) -> f64 {
    -2.0 * loglik + k as f64 * (n as f64).ln()
}

/// 2(ℓ̄ − s²_ℓ) over posterior draws of the observed-data log-likelihood, larger is better.
pub fn aicm(logliks: &[f64]) -> Result<f64> {
    if logliks.len() < 10 {
        return Err(MoeError::TooFewDraws {
            needed: 10,
            have: logliks.len(),
        });
    }
    Ok(2.0 * (stats::mean(logliks) - stats::variance(logliks)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Bic,
    Aicm,
    LogMarglik,
}

impl Criterion {
    pub fn smaller_is_better(self) -> bool {
        matches!(self, Criterion::Bic)
    }

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Bic => "bic",
            Criterion::Aicm => "aicm",
            Criterion::LogMarglik => "log_marglik",
        }
    }
}

/// Index of the preferred value (first one on ties); `None` if no value is finite.
pub fn winner(values: &[Option<f64>], criterion: Criterion) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in values.iter().enumerate() {
        let Some(v) = v.filter(|v| v.is_finite()) else { continue };
        let better = match best {
            None => true,
            Some((_, b)) if criterion.smaller_is_better() => v < b,
            Some((_, b)) => v > b,
        };
        if better {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

fn markov_series_counts(data: &Dataset, history: History) -> Result<(Vec<DMatrix<f64>>, usize)> {
    let Outcomes::Categorical { series, n_states } = data.outcomes() else {
        return Err(MoeError::Incompatible {
            family: "markov".into(),
            variant: 'a',
            reason: "marginal likelihood needs categorical series".into(),
        });
    };
    let counts = series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let cov = history.covariate_column().map(|c| data.covariates()[(i, c)]);
            markov_counts(s, history, *n_states, cov)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((counts, *n_states))
}

fn check_prior_shape(d0: &DMatrix<f64>, shape: (usize, usize)) -> Result<()> {
    if d0.shape() != shape {
        return Err(MoeError::Dimension(format!(
            "transition prior is {}×{}, data need {}×{}",
            d0.nrows(),
            d0.ncols(),
            shape.0,
            shape.1
        )));
    }
    Ok(())
}

/// Σ_j [ln B(d₀_j + n_j) − ln B(d₀_j)] over pooled transition counts.
pub fn exact_log_marglik_markov_g1(data: &Dataset, d0: &DMatrix<f64>, history: History) -> Result<f64> {
    let (counts, _) = markov_series_counts(data, history)?;
    let mut pooled = DMatrix::zeros(d0.nrows(), d0.ncols());
    for c in &counts {
        check_prior_shape(d0, c.shape())?;
        pooled += c;
    }
    Ok((0..d0.nrows())
        .map(|j| {
            let a: Vec<f64> = d0.row(j).iter().copied().collect();
            let post: Vec<f64> = a.iter().zip(pooled.row(j).iter()).map(|(x, n)| x + n).collect();
            ln_multi_beta(&post) - ln_multi_beta(&a)
        })
        .sum())
}

/// The same marginal likelihood as a product of one-step Dirichlet-multinomial predictives.
pub fn prequential_log_marglik_markov_g1(data: &Dataset, d0: &DMatrix<f64>, history: History) -> Result<f64> {
    let Outcomes::Categorical { series, n_states } = data.outcomes() else {
        return Err(MoeError::InvalidData("marginal likelihood needs categorical series".into()));
    };
    let mut alpha = d0.clone();
    let mut total = 0.0;
    for (i, s) in series.iter().enumerate() {
        let cov = history.covariate_column().map(|c| data.covariates()[(i, c)]);
        let x = match cov {
            Some(v) if v == 1.0 => 1,
            _ => 0,
        };
        let t_len = s.len() - 1;
        check_prior_shape(d0, (history.n_rows(*n_states, t_len), *n_states))?;
        for t in 1..s.len() {
            let j = history.row_index(s[t - 1], t, x, *n_states, t_len);
            let row_sum: f64 = alpha.row(j).sum();
            total += (alpha[(j, s[t])] / row_sum).ln();
            alpha[(j, s[t])] += 1.0;
        }
    }
    Ok(total)
}

/// Equal-weight mixture over stored conditional densities of S sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceDensity {
    pub components: Vec<DrawMoments>,
    /// A model of the right shape; its parameter values are not used.
    pub template: MeModel,
    pub known_cov: Option<DMatrix<f64>>,
}

/// Builds q_G from a chain run with moment storage, using at most `max_components`
/// evenly spaced draws. Chains whose gating was updated by plain MH carry no
/// gating conditionals; their γ factor is replaced by a Gaussian centred at each
/// draw with the within-mode covariance of the label-resolved draws.
pub fn build_importance_density(chain: &PosteriorChain, max_components: Option<usize>) -> Result<ImportanceDensity> {
    let s_total = chain.draws.len();
    if s_total == 0 {
        return Err(MoeError::TooFewDraws { needed: 1, have: 0 });
    }
    let template = chain.draws[0].model.clone();
    let g_count = template.components();
    let factorial: usize = (1..=g_count).product();
    if s_total < 100 * factorial {
        warn!("importance density from {s_total} draws; at least {} recommended", 100 * factorial);
    }
    let mut comps: Vec<DrawMoments> = chain
        .draws
        .iter()
        .map(|d| d.moments.clone())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| MoeError::InvalidParameter("chain was run without moment storage".into()))?;
    if comps.iter().any(|c| c.experts == ExpertMoments::Unavailable) {
        return Err(MoeError::Unsupported(
            "importance densities for Plackett-Luce experts".into(),
        ));
    }
    if matches!(template.weights(), Weights::Gating(_)) && g_count > 1 && comps.iter().any(|c| c.gating.is_none()) {
        let models = chain.models();
        let resolved = resolve_label_switching(&models, true, 0)?;
        let stacked = |m: &MeModel| -> DVector<f64> {
            let c = m.gating().unwrap().coef();
            DVector::from_iterator((g_count - 1) * c.ncols(), (1..g_count).flat_map(|g| c.row(g).iter().copied().collect::<Vec<_>>()))
        };
        let vs: Vec<DVector<f64>> = resolved.models.iter().map(stacked).collect();
        let dim = vs[0].len();
        let mean = vs.iter().fold(DVector::zeros(dim), |a, v| a + v) / vs.len() as f64;
        let mut cov = vs.iter().fold(DMatrix::zeros(dim, dim), |a, v| {
            let r = v - &mean;
            a + &r * r.transpose()
        }) / (vs.len() as f64 - 1.0).max(1.0);
        for k in 0..dim {
            cov[(k, k)] += 1e-8;
        }
        let p = dim / (g_count - 1);
        for (s, c) in comps.iter_mut().enumerate() {
            // draw s = resolved.relabel(σ_s⁻¹)
            let a = gating_relabel_map(&resolved.permutations[s].inverse(), p);
            c.gating = Some((stacked(&models[s]), stats::symmetrize(&a * &cov * a.transpose())));
        }
    }
    if let Some(max) = max_components {
        if max > 0 && comps.len() > max {
            let step = comps.len() as f64 / max as f64;
            comps = (0..max).map(|k| comps[(k as f64 * step) as usize].clone()).collect();
        }
    }
    Ok(ImportanceDensity {
        components: comps,
        template,
        known_cov: chain.prior.gaussian.as_ref().and_then(|g| g.known_cov.clone()),
    })
}

fn stacked_gating(model: &MeModel) -> Option<DVector<f64>> {
    let g = model.gating()?;
    let c = g.coef();
    Some(DVector::from_iterator(
        (c.nrows() - 1) * c.ncols(),
        (1..c.nrows()).flat_map(|r| c.row(r).iter().copied().collect::<Vec<_>>()),
    ))
}

impl ImportanceDensity {
    fn component_logpdf(&self, c: &DrawMoments, model: &MeModel) -> Result<f64> {
        let mut lp = 0.0;
        match model.weights() {
            Weights::Fixed(eta) => {
                if let Some(alpha) = &c.weights {
                    lp += stats::dirichlet_logpdf(eta.as_slice(), alpha);
                }
            }
            Weights::Gating(_) => {
                if let (Some((m, v)), Some(x)) = (&c.gating, stacked_gating(model)) {
                    if !m.is_empty() {
                        lp += stats::mvn_logpdf(&x, m, v)?;
                    }
                }
            }
        }
        match (model.experts(), &c.experts) {
            (Experts::Gaussian(v), ExpertMoments::Gaussian(ms)) => {
                for (e, m) in v.iter().zip(ms) {
                    lp += stats::mvn_logpdf(e.mean(), &m.mean, &m.mean_cov)?;
                    if self.known_cov.is_none() {
                        lp += stats::inv_wishart_logpdf(e.cov(), m.df, &m.scale)?;
                    }
                }
            }
            (Experts::Regression(v), ExpertMoments::Regression(ms)) => {
                for (e, m) in v.iter().zip(ms) {
                    lp += stats::mvn_logpdf(e.beta(), &m.coef_mean, &m.coef_cov)?;
                    lp += stats::inv_gamma_logpdf(e.sigma2(), m.shape, m.scale);
                }
            }
            (Experts::Binomial(v), ExpertMoments::Binomial(ms)) => {
                for (e, &(a, b)) in v.iter().zip(ms) {
                    lp += stats::beta_logpdf(e.prob(), a, b);
                }
            }
            (Experts::Markov(v), ExpertMoments::Markov(ms)) => {
                for (e, a) in v.iter().zip(ms) {
                    lp += markov_dirichlet_logpdf(e.xi(), a);
                }
            }
            _ => return Err(MoeError::Unsupported("importance density for this family".into())),
        }
        Ok(lp)
    }

    /// log q_G(θ).
    pub fn log_density(&self, model: &MeModel) -> Result<f64> {
        let terms = self
            .components
            .iter()
            .map(|c| self.component_logpdf(c, model))
            .collect::<Result<Vec<_>>>()?;
        Ok(logsumexp(&terms) - (terms.len() as f64).ln())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MeModel> {
        let c = &self.components[rng.random_range(0..self.components.len())];
        let weights = match self.template.weights() {
            Weights::Fixed(eta) => match &c.weights {
                Some(alpha) => Weights::Fixed(DVector::from_vec(stats::dirichlet_sample(alpha, rng))),
                None => Weights::Fixed(eta.clone()),
            },
            Weights::Gating(g) => {
                let p = g.n_coef();
                let g_count = g.components();
                let mut coef = DMatrix::zeros(g_count, p);
                if let Some((m, v)) = &c.gating {
                    if !m.is_empty() {
                        let x = stats::mvn_sample(m, v, rng)?;
                        for r in 1..g_count {
                            for k in 0..p {
                                coef[(r, k)] = x[(r - 1) * p + k];
                            }
                        }
                    }
                }
                Weights::Gating(Gating::new(coef)?)
            }
        };
        let experts = match (self.template.experts(), &c.experts) {
            (Experts::Gaussian(_), ExpertMoments::Gaussian(ms)) => Experts::Gaussian(
                ms.iter()
                    .map(|m| {
                        let mu = stats::mvn_sample(&m.mean, &m.mean_cov, rng)?;
                        let sigma = match &self.known_cov {
                            Some(k) => k.clone(),
                            None => stats::inv_wishart_sample(m.df, &m.scale, rng)?,
                        };
                        GaussianExpert::new(mu, sigma)
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            (Experts::Regression(_), ExpertMoments::Regression(ms)) => Experts::Regression(
                ms.iter()
                    .map(|m| {
                        let beta = stats::mvn_sample(&m.coef_mean, &m.coef_cov, rng)?;
                        RegressionExpert::new(beta, stats::inv_gamma_sample(m.shape, m.scale, rng))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            (Experts::Binomial(v), ExpertMoments::Binomial(ms)) => Experts::Binomial(
                ms.iter()
                    .map(|&(a, b)| {
                        let p = stats::beta_sample(a, b, rng).clamp(1e-300, 1.0 - 1e-16);
                        BinomialExpert::new(v[0].trials(), p)
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            (Experts::Markov(v), ExpertMoments::Markov(ms)) => Experts::Markov(
                ms.iter()
                    .map(|a| {
                        let mut xi = DMatrix::zeros(a.nrows(), a.ncols());
                        for j in 0..a.nrows() {
                            let row: Vec<f64> = a.row(j).iter().copied().collect();
                            for (k, x) in stats::dirichlet_sample(&row, rng).into_iter().enumerate() {
                                xi[(j, k)] = x;
                            }
                        }
                        MarkovExpert::new(v[0].history(), xi)
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => return Err(MoeError::Unsupported("importance density for this family".into())),
        };
        MeModel::new(self.template.variant(), weights, experts)
    }

    /// The same mixture with every component relabeled by σ.
    pub fn relabel(&self, sigma: &Permutation) -> ImportanceDensity {
        ImportanceDensity {
            components: self.components.iter().map(|c| c.relabel(sigma)).collect(),
            template: self.template.clone(),
            known_cov: self.known_cov.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsEstimate {
    pub log_marglik: f64,
    /// Delta-method standard error of the log estimate.
    pub mc_se: f64,
    pub ess: f64,
    pub draws: usize,
}

/// log of L⁻¹ Σ_l p(y|θ_l) p(θ_l) / q(θ_l) with θ_l ~ q (raw, unnormalized weights).
pub fn is_log_marglik(
    data: &Dataset,
    prior: &PriorSpec,
    q: &ImportanceDensity,
    draws: usize,
    seed: u64,
) -> Result<IsEstimate> {
    if draws == 0 {
        return Err(MoeError::InvalidParameter("need at least one importance draw".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thetas = (0..draws).map(|_| q.sample(&mut rng)).collect::<Result<Vec<_>>>()?;
    let logw = thetas
        .par_iter()
        .map(|m| -> Result<f64> {
            let ll: f64 = m.log_likelihood_terms(data)?.iter().sum();
            Ok(ll + prior.log_density(m)? - q.log_density(m)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return Err(MoeError::Numerical("every importance weight is zero".into()));
    }
    let w: Vec<f64> = logw.iter().map(|v| (v - mx).exp()).collect();
    let l = draws as f64;
    let mean = w.iter().sum::<f64>() / l;
    let var = if draws > 1 { stats::variance(&w) } else { 0.0 };
    let ess = w.iter().sum::<f64>().powi(2) / w.iter().map(|x| x * x).sum::<f64>();
    Ok(IsEstimate {
        log_marglik: mx + mean.ln(),
        mc_se: (var / l).sqrt() / mean,
        ess,
        draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{ecm_fit, EmConfig};
    use crate::experts::GaussianPrior;
    use crate::mcmc::{run_chain, ChainConfig};
    use crate::model::{Family, Variant};

    fn markov_data(n: usize, len: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi = DMatrix::from_row_slice(3, 3, &[0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4]);
        let e = MarkovExpert::new(History::PrevState, xi).unwrap();
        let series = (0..n)
            .map(|_| {
                let s0 = rng.random_range(0..3);
                e.sample(s0, len - 1, None, &mut rng).unwrap()
            })
            .collect();
        Dataset::without_covariates(Outcomes::Categorical { series, n_states: 3 }).unwrap()
    }

    #[test]
    fn bic_single_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = DMatrix::from_fn(100, 1, |_, _| rng.random_range(-1.0..1.0));
        let data = Dataset::without_covariates(Outcomes::Continuous(y)).unwrap();
        let fit = ecm_fit(&data, &EmConfig::new(Variant::A, Family::Gaussian, 1)).unwrap();
        let b = bic(&fit, &data).unwrap();
        assert!((b - (-2.0 * fit.loglik + 2.0 * 100f64.ln())).abs() < 1e-9);
        let mut unconverged = fit.clone();
        unconverged.converged = false;
        assert!(bic(&unconverged, &data).is_err());
    }

    #[test]
    fn reporting_fixtures_pick_the_published_winners() {
        // ranked-preference BICs: simple ME, standard ME, mixture, mixture of regressions
        let b = [Some(8491.0), Some(8512.0), Some(8513.0), Some(8528.0)];
        assert_eq!(winner(&b, Criterion::Bic), Some(0));
        // network AICMs for models (a)..(d)
        let a = [Some(-3644.24), Some(-3346.87), Some(-3682.71), Some(-3325.95)];
        assert_eq!(winner(&a, Criterion::Aicm), Some(3));
        assert_eq!(winner(&[None, Some(f64::NAN)], Criterion::LogMarglik), None);
    }

    #[test]
    fn aicm_moments() {
        assert_eq!(aicm(&[-5.0; 20]).unwrap(), -10.0);
        assert!(aicm(&[1.0; 9]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, v): (f64, f64) = (-100.0, 4.0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| m + v.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        // s.e. of 2(mean − var): 2·sqrt(v/n + 2v²/n)
        let se = 2.0 * ((v + 2.0 * v * v) / 100_000.0).sqrt();
        assert!((aicm(&draws).unwrap() - 2.0 * (m - v)).abs() < 3.0 * se);
    }

    #[test]
    fn exact_markov_marginal() {
        let d0 = DMatrix::from_element(3, 3, 1.0);
        let one = Dataset::without_covariates(Outcomes::Categorical { series: vec![vec![0, 2]], n_states: 3 }).unwrap();
        let v = exact_log_marglik_markov_g1(&one, &d0, History::PrevState).unwrap();
        assert!((v - (1.0f64 / 3.0).ln()).abs() < 1e-14);
        let data = markov_data(50, 5, 3);
        let a = exact_log_marglik_markov_g1(&data, &d0, History::PrevState).unwrap();
        let b = prequential_log_marglik_markov_g1(&data, &d0, History::PrevState).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn markov_marginal_matches_grid_quadrature() {
        // two states, only row 1 observed: ∫ ξ^a (1 − ξ)^b dξ on a 0.001 grid
        let series = vec![vec![0, 0, 1, 0, 0, 0, 1]];
        let data = Dataset::without_covariates(Outcomes::Categorical { series, n_states: 2 }).unwrap();
        let d0 = DMatrix::from_element(2, 2, 1.0);
        let exact = exact_log_marglik_markov_g1(&data, &d0, History::PrevState).unwrap();
        // row 1 (from state 0): 0→0 ×3, 0→1 ×2; row 2 (from state 1): 1→0 ×1
        let quad = |a: i32, b: i32| -> f64 {
            let h = 1e-3;
            (0..1000).map(|k| {
                let x = (k as f64 + 0.5) * h;
                x.powi(a) * (1.0 - x).powi(b) * h
            }).sum::<f64>()
        };
        let want = quad(3, 2).ln() + quad(1, 0).ln();
        assert!((exact - want).abs() < 1e-4);
    }

    #[test]
    fn empty_transitions_give_zero() {
        let data = Dataset::without_covariates(Outcomes::Categorical { series: vec![], n_states: 2 });
        if let Ok(d) = data {
            let v = exact_log_marglik_markov_g1(&d, &DMatrix::from_element(2, 2, 1.0), History::PrevState).unwrap();
            assert_eq!(v, 0.0);
        }
    }

    fn markov_chain(data: &Dataset, seed: u64) -> PosteriorChain {
        let mut cfg = ChainConfig::new(Variant::A, Family::Markov, 1);
        cfg.iters = 1_200;
        cfg.burnin = 200;
        cfg.store_moments = true;
        cfg.seed = seed;
        run_chain(data, &PriorSpec::default(), &cfg).unwrap()
    }

    #[test]
    fn is_recovers_exact_markov_marginal() {
        let data = markov_data(50, 5, 4);
        let chain = markov_chain(&data, 5);
        let q = build_importance_density(&chain, Some(200)).unwrap();
        let est = is_log_marglik(&data, &chain.prior, &q, 10_000, 6).unwrap();
        let exact = exact_log_marglik_markov_g1(&data, chain.prior.markov.as_ref().unwrap(), History::PrevState).unwrap();
        assert!((est.log_marglik - exact).abs() <= (3.0 * est.mc_se).max(1e-9));
        assert!((est.log_marglik - exact).abs() < 0.05);
    }

    #[test]
    fn is_matches_conjugate_gaussian_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20;
        let y = DMatrix::from_fn(n, 1, |_, _| 1.0 + rng.sample::<f64, _>(rand_distr::StandardNormal));
        let data = Dataset::without_covariates(Outcomes::Continuous(y.clone())).unwrap();
        let prior_g = GaussianPrior {
            mean: DVector::zeros(1),
            mean_cov: DMatrix::from_element(1, 1, 4.0),
            df: 3.0,
            scale: DMatrix::identity(1, 1),
            known_cov: Some(DMatrix::identity(1, 1)),
        };
        let prior = PriorSpec { gaussian: Some(prior_g), ..PriorSpec::default() };
        let mut cfg = ChainConfig::new(Variant::A, Family::Gaussian, 1);
        cfg.iters = 600;
        cfg.burnin = 100;
        cfg.store_moments = true;
        cfg.seed = 8;
        let chain = run_chain(&data, &prior, &cfg).unwrap();
        let q = build_importance_density(&chain, Some(200)).unwrap();
        let est = is_log_marglik(&data, &chain.prior, &q, 4_000, 9).unwrap();
        // y ~ N(0, I + 4·11ᵀ)
        let cov = DMatrix::identity(n, n) + DMatrix::from_element(n, n, 4.0);
        let exact = stats::mvn_logpdf(&y.column(0).into_owned(), &DVector::zeros(n), &cov).unwrap();
        assert!((est.log_marglik - exact).abs() < 3.0 * est.mc_se + 1e-3, "{} vs {exact} (se {})", est.log_marglik, est.mc_se);
    }

    #[test]
    fn single_moment_set_density_normalizes() {
        // 1-parameter toy: binomial G=1, q is a single Beta; integrate over π
        let data = Dataset::without_covariates(Outcomes::Binomial { counts: vec![1, 3, 4], trials: 5 }).unwrap();
        let mut cfg = ChainConfig::new(Variant::A, Family::Binomial, 1);
        cfg.iters = 2;
        cfg.burnin = 1;
        cfg.store_moments = true;
        let chain = run_chain(&data, &PriorSpec::default(), &cfg).unwrap();
        let q = build_importance_density(&chain, None).unwrap();
        assert_eq!(q.components.len(), 1);
        let h = 1e-5;
        let total: f64 = (0..100_000)
            .map(|k| {
                let p = (k as f64 + 0.5) * h;
                let m = MeModel::new(Variant::A, Weights::uniform(1), Experts::Binomial(vec![BinomialExpert::new(5, p).unwrap()])).unwrap();
                q.log_density(&m).unwrap().exp() * h
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn importance_density_is_symmetric_under_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let counts: Vec<u32> = (0..100).map(|i| {
            let p: f64 = if i % 2 == 0 { 0.2 } else { 0.8 };
            (0..5).filter(|_| rng.random::<f64>() < p).count() as u32
        }).collect();
        let data = Dataset::without_covariates(Outcomes::Binomial { counts, trials: 5 }).unwrap();
        let mut cfg = ChainConfig::new(Variant::A, Family::Binomial, 2);
        cfg.iters = 11_000;
        cfg.burnin = 1_000;
        cfg.store_moments = true;
        cfg.seed = 11;
        let chain = run_chain(&data, &PriorSpec::default(), &cfg).unwrap();
        let q = build_importance_density(&chain, None).unwrap();
        let draw = &chain.draws[500].model;
        let swapped = draw.relabel(&Permutation::new(vec![1, 0]).unwrap()).unwrap();
        let a = q.log_density(draw).unwrap();
        let b = q.log_density(&swapped).unwrap();
        assert!(((a - b).exp() - 1.0).abs() < 0.1, "{a} vs {b}");
    }

    #[test]
    fn more_draws_do_not_inflate_the_error() {
        let data = markov_data(30, 4, 12);
        let mut cfg = ChainConfig::new(Variant::A, Family::Markov, 2);
        cfg.iters = 2_200;
        cfg.burnin = 200;
        cfg.store_moments = true;
        cfg.seed = 13;
        let chain = run_chain(&data, &PriorSpec::default(), &cfg).unwrap();
        let q = build_importance_density(&chain, Some(100)).unwrap();
        let (mut s1, mut s2) = (0.0, 0.0);
        for r in 0..20 {
            s1 += is_log_marglik(&data, &chain.prior, &q, 200, 100 + r).unwrap().mc_se;
            s2 += is_log_marglik(&data, &chain.prior, &q, 400, 200 + r).unwrap().mc_se;
        }
        assert!(s2 <= 1.05 * s1, "{s2} vs {s1}");
    }
}
