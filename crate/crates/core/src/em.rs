//! EM/ECM maximum-likelihood estimation with multi-start and empirical-information
//! standard errors.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cluster::kmeans;
use crate::error::{MoeError, Result};
use crate::experts::{Experts, History, MStepNote};
use crate::logit::{fit_logit, gating_problem, LogitOptions};
use crate::model::{Dataset, Family, Gating, MeModel, Outcomes, Variant, Weights};
use crate::params;
use crate::stats::{self, derive_seed, logsumexp};

/// n × G posterior membership probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities(pub DMatrix<f64>);

impl Responsibilities {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// argmax_g ẑ_ig with ties broken toward the lowest index.
    pub fn map_assignment(&self) -> Vec<usize> {
        self.0
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for g in 1..row.len() {
                    if row[g] > row[best] {
                        best = g;
                    }
                }
                best
            })
            .collect()
    }
}

/// Row-normalized responsibilities and per-observation log-likelihood terms.
pub fn e_step_with_loglik(model: &MeModel, data: &Dataset) -> Result<(Responsibilities, Vec<f64>)> {
    let mut lj = model.log_joint_matrix(data)?;
    let mut terms = Vec::with_capacity(data.n());
    for (i, mut row) in lj.row_iter_mut().enumerate() {
        let lse = logsumexp(row.transpose().as_slice());
        if !lse.is_finite() {
            return Err(MoeError::DegenerateObservation(i));
        }
        row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        terms.push(lse);
    }
    Ok((Responsibilities(lj), terms))
}

/// ẑ_ig ∝ weight × expert density, computed in log space.
pub fn e_step(model: &MeModel, data: &Dataset) -> Result<Responsibilities> {
    Ok(e_step_with_loglik(model, data)?.0)
}

/// Gating M-step result.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingUpdate {
    pub gating: Gating,
    pub objective: f64,
    pub initial_objective: f64,
    pub separation: bool,
}

/// Maximizes Σ_i Σ_g ẑ_ig log η_g(x̃_i) over the gating coefficients, starting at `start`.
pub fn m_step_gating(resp: &Responsibilities, design: &DMatrix<f64>, start: Option<&Gating>) -> Result<GatingUpdate> {
    let r = resp.matrix();
    if r.nrows() != design.nrows() {
        return Err(MoeError::Dimension(format!(
            "{} responsibility rows for {} design rows",
            r.nrows(),
            design.nrows()
        )));
    }
    let g = r.ncols();
    let init = match start {
        Some(s) if s.components() == g && s.n_coef() == design.ncols() => s.coef().clone(),
        _ => DMatrix::zeros(g, design.ncols()),
    };
    let problem = gating_problem(design, r);
    let fit = fit_logit(&problem, &init, LogitOptions::default());
    if fit.capped {
        warn!("gating coefficients hit the ±{} cap: complete separation suspected", crate::logit::COEF_CAP);
    }
    Ok(GatingUpdate {
        gating: Gating::new(fit.coef)?,
        objective: fit.objective,
        initial_objective: fit.initial_objective,
        separation: fit.capped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// k-means on outcomes for continuous families, Dirichlet(1) rows otherwise.
    Auto,
    /// Dirichlet(1, …, 1) random responsibilities.
    Random,
    Responsibilities(DMatrix<f64>),
    Model(Box<MeModel>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnDegenerate {
    Restart,
    Abort,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub variant: Variant,
    pub family: Family,
    pub components: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub init: Init,
    pub seed: u64,
    pub on_degenerate: OnDegenerate,
    /// Markov history definition (prev-state by default).
    pub history: Option<History>,
    pub compute_se: bool,
}

impl EmConfig {
    pub fn new(variant: Variant, family: Family, components: usize) -> Self {
        EmConfig {
            variant,
            family,
            components,
            tol: 1e-8,
            max_iter: 500,
            init: Init::Auto,
            seed: 0,
            on_degenerate: OnDegenerate::Restart,
            history: None,
            compute_se: true,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StdErrors {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    /// `None` where the information matrix is singular in that direction or
    /// the finite-difference step left the parameter space.
    pub se: Vec<Option<f64>>,
    pub rank: usize,
    pub dim: usize,
}

impl StdErrors {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).and_then(|k| self.se[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartSummary {
    pub seed: u64,
    pub loglik: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: MeModel,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub responsibilities: Responsibilities,
    pub map_assignment: Vec<usize>,
    pub std_errors: Option<StdErrors>,
    pub converged: bool,
    pub iterations: usize,
    pub seed: u64,
    pub notes: Vec<MStepNote>,
    pub separation: bool,
    pub restarts: Vec<RestartSummary>,
}

/// Minimum effective component size before a fit is declared degenerate.
fn min_component_size(model: &MeModel) -> f64 {
    match model.experts() {
        Experts::Gaussian(v) => v[0].dim() as f64 + 1.0,
        Experts::Regression(v) => v[0].beta().len() as f64 + 1.0,
        _ => 1e-6,
    }
}

fn initial_responsibilities(cfg: &EmConfig, data: &Dataset, seed: u64) -> Result<DMatrix<f64>> {
    let n = data.n();
    let g = cfg.components;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random = |rng: &mut ChaCha8Rng| {
        let mut m = DMatrix::zeros(n, g);
        for i in 0..n {
            let row = stats::dirichlet_sample(&vec![1.0; g], rng);
            for (k, v) in row.into_iter().enumerate() {
                m[(i, k)] = v;
            }
        }
        m
    };
    match &cfg.init {
        Init::Responsibilities(r) => {
            if r.shape() != (n, g) {
                return Err(MoeError::Dimension("initial responsibilities have the wrong shape".into()));
            }
            Ok(r.clone())
        }
        Init::Random => Ok(random(&mut rng)),
        Init::Model(_) => unreachable!("model initialization skips responsibilities"),
        Init::Auto => match (cfg.family, data.outcomes()) {
            (Family::Gaussian | Family::GaussianRegression, Outcomes::Continuous(y)) if g > 1 => {
                let mut cols: Vec<DVector<f64>> = Vec::new();
                if cfg.family == Family::GaussianRegression {
                    for c in 0..data.q() {
                        cols.push(data.covariates().column(c).into_owned());
                    }
                }
                for c in 0..y.ncols() {
                    cols.push(y.column(c).into_owned());
                }
                // standardize so that no column dominates the distances
                let points: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        cols.iter()
                            .map(|col| {
                                let m = col.mean();
                                let sd = col.variance().sqrt().max(1e-12);
                                (col[i] - m) / sd
                            })
                            .collect()
                    })
                    .collect();
                let km = kmeans(&points, g, 1, seed);
                let mut r = DMatrix::zeros(n, g);
                for (i, &l) in km.labels.iter().enumerate() {
                    r[(i, l)] = 1.0;
                }
                Ok(r)
            }
            _ if g == 1 => Ok(DMatrix::from_element(n, 1, 1.0)),
            _ => Ok(random(&mut rng)),
        },
    }
}

fn weights_from_resp(
    variant: Variant,
    resp: &Responsibilities,
    design: &DMatrix<f64>,
    current: Option<&Gating>,
) -> Result<(Weights, bool)> {
    let r = resp.matrix();
    if variant.gating_uses_covariates() {
        let up = m_step_gating(resp, design, current)?;
        Ok((Weights::Gating(up.gating), up.separation))
    } else {
        let n = r.nrows() as f64;
        let eta: Vec<f64> = (0..r.ncols()).map(|g| (r.column(g).sum() / n).max(1e-300)).collect();
        let s: f64 = eta.iter().sum();
        Ok((Weights::Fixed(DVector::from_iterator(eta.len(), eta.iter().map(|e| e / s))), false))
    }
}

fn check_sizes(model: &MeModel, resp: &Responsibilities) -> Result<()> {
    let min = min_component_size(model);
    for g in 0..resp.matrix().ncols() {
        let size = resp.matrix().column(g).sum();
        if size < min {
            return Err(MoeError::DegenerateComponent { component: g, size });
        }
    }
    Ok(())
}

/// One EM/ECM run from a single initialization.
fn run_once(data: &Dataset, cfg: &EmConfig, seed: u64) -> Result<FitResult> {
    let linked = cfg.family == Family::PlackettLuce && cfg.variant.experts_use_covariates();
    let history = match (cfg.family, cfg.history) {
        (Family::Markov, Some(h)) => Some(h),
        (Family::Markov, None) if cfg.variant.experts_use_covariates() => {
            Some(History::PrevStateCovariate { column: 0 })
        }
        _ => None,
    };
    let mut notes = Vec::new();
    let mut separation = false;
    let mut model = match &cfg.init {
        Init::Model(m) => {
            m.check_data(data)?;
            (**m).clone()
        }
        _ => {
            let r0 = Responsibilities(initial_responsibilities(cfg, data, seed)?);
            let template = Experts::template(cfg.family, cfg.components, data, linked, history)?;
            let probe = MeModel::new(
                cfg.variant,
                if cfg.variant.gating_uses_covariates() {
                    Weights::Gating(Gating::zeros(cfg.components, data.q() + 1))
                } else {
                    Weights::uniform(cfg.components)
                },
                template.clone(),
            )?;
            probe.check_data(data)?;
            check_sizes(&probe, &r0)?;
            let (experts, n0) = template.m_step(data, r0.matrix())?;
            notes.extend(n0);
            let (weights, sep) = weights_from_resp(cfg.variant, &r0, data.design(), None)?;
            separation |= sep;
            MeModel::new(cfg.variant, weights, experts)?
        }
    };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut resp;
    loop {
        let (r, terms) = e_step_with_loglik(&model, data)?;
        resp = r;
        iterations += 1;
        let ll: f64 = terms.iter().sum();
        if !ll.is_finite() {
            return Err(MoeError::NonFinite);
        }
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if ll < prev - 1e-8 * (1.0 + prev.abs()) {
                debug!("log-likelihood decreased from {prev} to {ll} at iteration {iterations}");
            }
            trace.push(ll);
            if (ll - prev).abs() < cfg.tol {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
        if iterations >= cfg.max_iter {
            break;
        }
        check_sizes(&model, &resp)?;
        let (experts, n1) = model.experts().m_step(data, resp.matrix())?;
        notes.extend(n1);
        let (weights, sep) = weights_from_resp(cfg.variant, &resp, data.design(), model.gating())?;
        separation |= sep;
        model = MeModel::new(cfg.variant, weights, experts)?;
    }
    let loglik = *trace.last().unwrap();
    let map_assignment = resp.map_assignment();
    let std_errors = if cfg.compute_se {
        Some(standard_errors(&model, data)?)
    } else {
        None
    };
    Ok(FitResult {
        model,
        loglik,
        loglik_trace: trace,
        responsibilities: resp,
        map_assignment,
        std_errors,
        converged,
        iterations,
        seed,
        notes,
        separation,
        restarts: Vec::new(),
    })
}

/// Alternates E-steps with conditional M-steps (experts, then gating) until the
/// absolute log-likelihood change falls below `tol` or `max_iter` is reached.
///
/// Degenerate components trigger a fresh initialization (seeded from the
/// configured seed) under `OnDegenerate::Restart`, up to ten attempts.
pub fn ecm_fit(data: &Dataset, cfg: &EmConfig) -> Result<FitResult> {
    if cfg.components == 0 {
        return Err(MoeError::InvalidParameter("need at least one component".into()));
    }
    let attempts = match (cfg.on_degenerate, &cfg.init) {
        (OnDegenerate::Restart, Init::Auto | Init::Random) => 10,
        _ => 1,
    };
    let mut last = None;
    for a in 0..attempts {
        let seed = if a == 0 { cfg.seed } else { derive_seed(cfg.seed, 1_000_000 + a as u64) };
        match run_once(data, cfg, seed) {
            Ok(fit) => return Ok(fit),
            Err(e) if e.is_numerical() && attempts > 1 => {
                debug!("EM attempt {a} failed: {e}");
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(MoeError::AllRestartsFailed {
        attempts,
        last: Box::new(last.expect("at least one attempt")),
    })
}

/// Best-by-log-likelihood fit over `n_restarts` initializations. Restart r uses
/// seed `derive_seed(cfg.seed, r)` except restart 0, which uses `cfg.seed` itself.
/// Restarts run in parallel; ties are broken by the smaller seed.
pub fn multi_start(data: &Dataset, cfg: &EmConfig, n_restarts: usize) -> Result<FitResult> {
    if n_restarts == 0 {
        return Err(MoeError::InvalidParameter("need at least one restart".into()));
    }
    let seeds: Vec<u64> = (0..n_restarts)
        .map(|r| if r == 0 { cfg.seed } else { derive_seed(cfg.seed, r as u64) })
        .collect();
    let mut fast = cfg.clone();
    fast.compute_se = false;
    let results: Vec<(u64, Result<FitResult>)> = seeds
        .par_iter()
        .map(|&s| {
            let mut c = fast.clone();
            c.seed = s;
            c.on_degenerate = OnDegenerate::Abort;
            (s, ecm_fit(data, &c))
        })
        .collect();
    let summaries: Vec<RestartSummary> = results
        .iter()
        .map(|(s, r)| match r {
            Ok(f) => RestartSummary {
                seed: *s,
                loglik: Some(f.loglik),
                converged: f.converged,
                iterations: f.iterations,
                error: None,
            },
            Err(e) => RestartSummary {
                seed: *s,
                loglik: None,
                converged: false,
                iterations: 0,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for (_, r) in results {
        match r {
            Ok(f) => {
                let better = match &best {
                    None => true,
                    Some(b) => f.loglik > b.loglik || (f.loglik == b.loglik && f.seed < b.seed),
                };
                if better {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some(mut fit) = best else {
        return Err(MoeError::AllRestartsFailed {
            attempts: n_restarts,
            last: Box::new(last_err.expect("every restart failed")),
        });
    };
    if cfg.compute_se {
        fit.std_errors = Some(standard_errors(&fit.model, data)?);
    }
    fit.restarts = summaries;
    Ok(fit)
}

/// Per-observation scores of the observed-data log-likelihood by central
/// differences with step h = 1e-6·(1 + |θ_k|). Columns whose step leaves the
/// parameter space are `None`.
pub fn observation_scores(model: &MeModel, data: &Dataset) -> Result<Vec<Option<DVector<f64>>>> {
    let theta = params::to_vector(model);
    let n = data.n();
    let mut cols = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let h = 1e-6 * (1.0 + theta[k].abs());
        let mut up = theta.clone();
        up[k] += h;
        let mut down = theta.clone();
        down[k] -= h;
        let terms = |t: &DVector<f64>| -> Option<Vec<f64>> {
            let m = params::from_vector(model, t).ok()?;
            let v = m.log_likelihood_terms(data).ok()?;
            v.iter().all(|x| x.is_finite()).then_some(v)
        };
        match (terms(&up), terms(&down)) {
            (Some(a), Some(b)) => {
                cols.push(Some(DVector::from_iterator(n, a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)))))
            }
            _ => cols.push(None),
        }
    }
    Ok(cols)
}

/// Standard errors from the inverse empirical information Σ_i s_i s_iᵀ.
pub fn standard_errors(model: &MeModel, data: &Dataset) -> Result<StdErrors> {
    let names = params::param_names(model);
    let estimates: Vec<f64> = params::to_vector(model).iter().copied().collect();
    let dim = estimates.len();
    let scores = observation_scores(model, data)?;
    let avail: Vec<usize> = (0..dim).filter(|&k| scores[k].is_some()).collect();
    let m = avail.len();
    let mut se = vec![None; dim];
    if m == 0 {
        return Ok(StdErrors { names, estimates, se, rank: 0, dim });
    }
    let mut info = DMatrix::zeros(m, m);
    for (a, &ka) in avail.iter().enumerate() {
        for (b, &kb) in avail.iter().enumerate().skip(a) {
            let v = scores[ka].as_ref().unwrap().dot(scores[kb].as_ref().unwrap());
            info[(a, b)] = v;
            info[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(info);
    let max_ev = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let thresh = 1e-10 * max_ev.max(f64::MIN_POSITIVE);
    let rank = eig.eigenvalues.iter().filter(|&&e| e > thresh).count();
    for a in 0..m {
        let mut var = 0.0;
        let mut null_weight = 0.0;
        for (j, &ev) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors[(a, j)];
            if ev > thresh {
                var += v * v / ev;
            } else {
                null_weight += v * v;
            }
        }
        se[avail[a]] = if null_weight > 1e-6 { None } else { Some(var.sqrt()) };
    }
    Ok(StdErrors { names, estimates, se, rank, dim })
}

/// MAP assignment × categorical covariate counts (rows: components, columns: sorted distinct values).
pub fn crosstab(map: &[usize], g_count: usize, covariate: &[f64]) -> (Vec<f64>, Vec<Vec<usize>>) {
    let mut levels: Vec<f64> = covariate.to_vec();
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup();
    let mut table = vec![vec![0; levels.len()]; g_count];
    for (&z, &x) in map.iter().zip(covariate) {
        let c = levels.iter().position(|&l| l == x).unwrap();
        table[z][c] += 1;
    }
    (levels, table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::GaussianExpert;
    use crate::stats::normal_logpdf;
    use rand::Rng;

    fn two_blob_data(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DMatrix::from_fn(n, 1, |i, _| {
            let e: f64 = rng.sample(rand_distr::StandardNormal);
            if i % 3 == 0 { 4.0 + 0.5 * e } else { e }
        });
        Dataset::without_covariates(Outcomes::Continuous(y)).unwrap()
    }

    #[test]
    fn e_step_special_cases() {
        let data = two_blob_data(1, 20);
        let e = GaussianExpert::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let one = MeModel::new(Variant::A, Weights::uniform(1), Experts::Gaussian(vec![e.clone()])).unwrap();
        assert!(e_step(&one, &data).unwrap().matrix().iter().all(|&v| v == 1.0));
        let twin = MeModel::new(Variant::A, Weights::uniform(2), Experts::Gaussian(vec![e.clone(), e])).unwrap();
        assert!(e_step(&twin, &data).unwrap().matrix().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn e_step_matches_hand_ratio() {
        let data = two_blob_data(2, 10);
        let e1 = GaussianExpert::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let e2 = GaussianExpert::new(DVector::from_element(1, 4.0), DMatrix::from_element(1, 1, 0.25)).unwrap();
        let model = MeModel::new(
            Variant::A,
            Weights::Fixed(DVector::from_vec(vec![0.6, 0.4])),
            Experts::Gaussian(vec![e1, e2]),
        )
        .unwrap();
        let r = e_step(&model, &data).unwrap();
        let y = data.continuous().unwrap();
        for i in 0..10 {
            let a = 0.6 * normal_logpdf(y[(i, 0)], 0.0, 1.0).exp();
            let b = 0.4 * normal_logpdf(y[(i, 0)], 4.0, 0.25).exp();
            assert!((r.matrix()[(i, 0)] - a / (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_observation_is_named() {
        use crate::experts::MarkovExpert;
        let series = vec![vec![0, 0, 0], vec![0, 1, 0]];
        let data = Dataset::without_covariates(Outcomes::Categorical { series, n_states: 2 }).unwrap();
        let xi = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        let e = MarkovExpert::new(History::PrevState, xi).unwrap();
        let model = MeModel::new(Variant::A, Weights::uniform(1), Experts::Markov(vec![e])).unwrap();
        assert_eq!(e_step(&model, &data), Err(MoeError::DegenerateObservation(1)));
    }

    #[test]
    fn map_ties_go_to_lowest_index() {
        let r = Responsibilities(DMatrix::from_row_slice(2, 3, &[0.4, 0.4, 0.2, 0.2, 0.4, 0.4]));
        assert_eq!(r.map_assignment(), vec![0, 1]);
    }

    #[test]
    fn single_gaussian_converges_immediately() {
        let data = two_blob_data(3, 50);
        let fit = ecm_fit(&data, &EmConfig::new(Variant::A, Family::Gaussian, 1)).unwrap();
        assert!(fit.converged && fit.iterations <= 2);
        let y = data.continuous().unwrap();
        let Experts::Gaussian(v) = fit.model.experts() else { panic!() };
        assert!((v[0].mean()[0] - y.mean()).abs() < 1e-12);
        let biased = y.iter().map(|v| (v - y.mean()).powi(2)).sum::<f64>() / 50.0;
        assert!((v[0].cov()[(0, 0)] - biased).abs() < 1e-12);
    }

    #[test]
    fn known_sigma_mean_se() {
        // SE of the mean for N(μ, 1) data is 1/√n; with the variance also free the
        // information for μ is unchanged (orthogonal parameters).
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 400;
        let y = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let data = Dataset::without_covariates(Outcomes::Continuous(y)).unwrap();
        let fit = ecm_fit(&data, &EmConfig::new(Variant::A, Family::Gaussian, 1)).unwrap();
        let se = fit.std_errors.as_ref().unwrap().get("mu[1][1]").unwrap();
        assert!((se - 1.0 / (n as f64).sqrt()).abs() < 0.05 / (n as f64).sqrt() * 2.0);
        let doubled = data.select_rows(&(0..n).chain(0..n).collect::<Vec<_>>());
        let fit2 = ecm_fit(&doubled, &EmConfig::new(Variant::A, Family::Gaussian, 1)).unwrap();
        let se2 = fit2.std_errors.as_ref().unwrap().get("mu[1][1]").unwrap();
        assert!((se2 / se - 1.0 / 2f64.sqrt()).abs() < 0.05 / 2f64.sqrt());
    }

    #[test]
    fn gating_intercept_only_closed_form() {
        let c = [0.2, 0.3, 0.5];
        let r = Responsibilities(DMatrix::from_fn(10, 3, |_, g| c[g]));
        let design = DMatrix::from_element(10, 1, 1.0);
        let up = m_step_gating(&r, &design, None).unwrap();
        for g in 1..3 {
            assert!((up.gating.coef()[(g, 0)] - (c[g] / c[0]).ln()).abs() < 1e-9);
        }
        assert!(up.objective >= up.initial_objective);
    }

    #[test]
    fn two_component_fit_is_monotone_and_deterministic() {
        let data = two_blob_data(4, 150);
        let cfg = EmConfig::new(Variant::A, Family::Gaussian, 2).with_seed(5);
        let a = multi_start(&data, &cfg, 4).unwrap();
        let b = multi_start(&data, &cfg, 4).unwrap();
        assert_eq!(a, b);
        for w in a.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        let single = ecm_fit(&data, &cfg).unwrap();
        let one = multi_start(&data, &cfg, 1).unwrap();
        assert_eq!(single.loglik, one.loglik);
        assert_eq!(single.model, one.model);
        let reached = a
            .restarts
            .iter()
            .filter(|r| r.loglik.is_some_and(|l| (l - a.loglik).abs() < 1e-4))
            .count();
        assert!(reached >= 4 * 95 / 100);
    }
}
