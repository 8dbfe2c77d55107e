//! Bayesian estimation by MH-within-Gibbs sampling with random permutation
//! sampling and post-hoc label-switching resolution.

pub mod diagnostics;
pub mod gating;
pub mod prior;
pub mod relabel;
pub mod scale_mixture;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::em::{ecm_fit, EmConfig, Init, OnDegenerate};
use crate::error::{MoeError, Result};
use crate::experts::{
    binomial_conjugate_draw, gaussian_conjugate_draw, markov_counts, markov_dirichlet_draw, plackett_luce_gibbs,
    regression_conjugate_draw, Experts, GaussianMoments, History, PlSupport, RegressionMoments,
};
use crate::model::{Allocation, Dataset, Family, Gating, MeModel, Outcomes, Permutation, Variant, Weights};
use crate::stats::{self, derive_seed};

pub use diagnostics::{psrf, summarize, ParamSummary};
pub use gating::{drum_update_gamma, mh_update_gamma, DrumState, GammaConditional, GatingSampler, MhProposal};
pub use prior::{GatingPrior, PriorSpec};
pub use relabel::{resolve_label_switching, Relabeled};
pub use scale_mixture::{fit_logistic_scale_mixture, logistic_scale_mixture, ScaleMixture};

/// Parameters of the full conditionals an expert draw came from.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpertMoments {
    Gaussian(Vec<GaussianMoments>),
    Regression(Vec<RegressionMoments>),
    /// Beta parameters per component.
    Binomial(Vec<(f64, f64)>),
    /// Row-wise Dirichlet parameters per component.
    Markov(Vec<DMatrix<f64>>),
    /// Plackett-Luce updates are not stored as closed-form conditionals.
    Unavailable,
}

impl ExpertMoments {
    fn relabel(&self, sigma: &Permutation) -> ExpertMoments {
        match self {
            ExpertMoments::Gaussian(v) => ExpertMoments::Gaussian(sigma.apply(v)),
            ExpertMoments::Regression(v) => ExpertMoments::Regression(sigma.apply(v)),
            ExpertMoments::Binomial(v) => ExpertMoments::Binomial(sigma.apply(v)),
            ExpertMoments::Markov(v) => ExpertMoments::Markov(sigma.apply(v)),
            ExpertMoments::Unavailable => ExpertMoments::Unavailable,
        }
    }
}

/// Stored conditional-density parameters of one sweep, for importance densities.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawMoments {
    /// Dirichlet parameters of the weight draw (variants a, b).
    pub weights: Option<Vec<f64>>,
    /// Joint Gaussian over the stacked non-baseline gating rows (γ_2, …, γ_G).
    pub gating: Option<(DVector<f64>, DMatrix<f64>)>,
    pub experts: ExpertMoments,
}

/// Linear map taking stacked (γ_2..γ_G) to the stacked rows of the relabeled gating.
pub(crate) fn gating_relabel_map(sigma: &Permutation, p: usize) -> DMatrix<f64> {
    let g_count = sigma.len();
    let m = (g_count - 1) * p;
    let mut a = DMatrix::zeros(m, m);
    for g in 1..g_count {
        for (src, sign) in [(sigma.map(g), 1.0), (sigma.map(0), -1.0)] {
            if src == 0 {
                continue;
            }
            for k in 0..p {
                a[((g - 1) * p + k, (src - 1) * p + k)] += sign;
            }
        }
    }
    a
}

impl DrawMoments {
    pub fn relabel(&self, sigma: &Permutation) -> DrawMoments {
        DrawMoments {
            weights: self.weights.as_ref().map(|w| sigma.apply(w)),
            gating: self.gating.as_ref().map(|(mean, cov)| {
                let p = mean.len() / (sigma.len() - 1);
                let a = gating_relabel_map(sigma, p);
                (&a * mean, stats::symmetrize(&a * cov * a.transpose()))
            }),
            experts: self.experts.relabel(sigma),
        }
    }
}

/// One retained sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub model: MeModel,
    pub allocation: Option<Allocation>,
    /// Observed-data log-likelihood at `model`.
    pub loglik: f64,
    /// Random permutation applied at the end of the sweep.
    pub permutation: Permutation,
    pub moments: Option<DrawMoments>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChainInit {
    /// Allocations from a short EM run (random allocations if it fails).
    Auto,
    Allocations(Vec<usize>),
    Model(Box<MeModel>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub variant: Variant,
    pub family: Family,
    pub components: usize,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub gating_sampler: GatingSampler,
    pub permute: bool,
    pub seed: u64,
    pub history: Option<History>,
    pub store_moments: bool,
    pub store_allocations: bool,
    pub init: ChainInit,
    /// Hold the allocations at their initial values (conditional checks).
    pub fix_allocations: bool,
    /// Drop the likelihood from every update, so the chain targets the prior.
    pub prior_only: bool,
}

impl ChainConfig {
    /// 15 000 sweeps with the first 5 000 discarded, no thinning, permutation sampling on.
    pub fn new(variant: Variant, family: Family, components: usize) -> Self {
        ChainConfig {
            variant,
            family,
            components,
            iters: 15_000,
            burnin: 5_000,
            thin: 1,
            gating_sampler: GatingSampler::DrumAux,
            permute: true,
            seed: 0,
            history: None,
            store_moments: false,
            store_allocations: false,
            init: ChainInit::Auto,
            fix_allocations: false,
            prior_only: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(MoeError::InvalidParameter("need at least one component".into()));
        }
        if self.burnin >= self.iters {
            return Err(MoeError::InvalidParameter(format!(
                "burn-in {} must be smaller than the number of iterations {}",
                self.burnin, self.iters
            )));
        }
        if self.thin == 0 {
            return Err(MoeError::InvalidParameter("thinning must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    pub draws: Vec<Draw>,
    pub config: ChainConfig,
    pub prior: PriorSpec,
    /// Post-burn-in acceptance rate of the gating update for each non-baseline component.
    pub acceptance: Vec<f64>,
}

impl PosteriorChain {
    pub fn models(&self) -> Vec<MeModel> {
        self.draws.iter().map(|d| d.model.clone()).collect()
    }

    pub fn logliks(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.loglik).collect()
    }
}

/// Allocation probabilities p_ig ∝ weight × expert density, computed from the
/// weight and density matrices directly (independently of the E-step code).
pub fn allocation_probabilities(model: &MeModel, data: &Dataset) -> Result<DMatrix<f64>> {
    let lw = model.log_weight_matrix(data)?;
    let ld = model.experts().log_density_matrix(data)?;
    let mut p = lw + ld;
    for (i, mut row) in p.row_iter_mut().enumerate() {
        let mut v: Vec<f64> = row.iter().copied().collect();
        let lse = stats::normalize_log(&mut v);
        if !lse.is_finite() {
            return Err(MoeError::DegenerateObservation(i));
        }
        for (dst, src) in row.iter_mut().zip(v) {
            *dst = src;
        }
    }
    Ok(p)
}

/// Step 3: z_i ~ M(1, p_i1, …, p_iG) independently.
pub fn draw_allocations<R: rand::Rng + ?Sized>(model: &MeModel, data: &Dataset, rng: &mut R) -> Result<Allocation> {
    let p = allocation_probabilities(model, data)?;
    let labels = p
        .row_iter()
        .map(|row| stats::sample_categorical(row.transpose().as_slice(), rng))
        .collect();
    Allocation::new(labels, model.components())
}

fn draw_allocations_prior<R: rand::Rng + ?Sized>(model: &MeModel, data: &Dataset, rng: &mut R) -> Result<Allocation> {
    let lw = model.log_weight_matrix(data)?;
    let labels = lw
        .row_iter()
        .map(|row| {
            let v: Vec<f64> = row.iter().copied().collect();
            stats::sample_log_categorical(&v, rng).ok_or(MoeError::NonFinite)
        })
        .collect::<Result<Vec<_>>>()?;
    Allocation::new(labels, model.components())
}

/// Relabels a draw by σ: experts, weights/gating and allocations consistently.
pub fn random_permutation_step<R: rand::Rng + ?Sized>(
    model: &MeModel,
    allocation: &Allocation,
    rng: &mut R,
) -> Result<(MeModel, Allocation, Permutation)> {
    let sigma = Permutation::random(model.components(), rng);
    Ok((model.relabel(&sigma)?, allocation.relabel(&sigma), sigma))
}

/// Sampler state carried between sweeps.
#[derive(Debug, Clone)]
pub struct SweepState {
    pub model: MeModel,
    pub allocation: Allocation,
    pub proposal: Option<MhProposal>,
    pub drum: Option<DrumState>,
    accepted: Vec<usize>,
    proposed: Vec<usize>,
}

impl SweepState {
    pub fn new(model: MeModel, allocation: Allocation, data: &Dataset) -> Result<Self> {
        let g = model.components();
        let proposal = match model.weights() {
            Weights::Gating(_) if g > 1 => Some(MhProposal::default_for(data.design(), g)?),
            _ => None,
        };
        Ok(SweepState {
            model,
            allocation,
            proposal,
            drum: None,
            accepted: vec![0; g],
            proposed: vec![0; g],
        })
    }
}

fn expert_draw<R: rand::Rng + ?Sized>(
    experts: &Experts,
    data: &Dataset,
    labels: &[usize],
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<(Experts, ExpertMoments)> {
    let g_count = experts.len();
    Ok(match (experts, data.outcomes()) {
        (Experts::Gaussian(v), Outcomes::Continuous(y)) => {
            let (e, m) = gaussian_conjugate_draw(y, labels, v, prior.gaussian.as_ref().unwrap(), rng)?;
            (Experts::Gaussian(e), ExpertMoments::Gaussian(m))
        }
        (Experts::Regression(v), Outcomes::Continuous(y)) => {
            let yv: Vec<f64> = y.column(0).iter().copied().collect();
            let (e, m) =
                regression_conjugate_draw(data.design(), &yv, labels, v, prior.regression.as_ref().unwrap(), rng)?;
            (Experts::Regression(e), ExpertMoments::Regression(m))
        }
        (Experts::Binomial(_), Outcomes::Binomial { counts, trials }) => {
            let (e, m) = binomial_conjugate_draw(counts, *trials, labels, g_count, prior.binomial, rng)?;
            (Experts::Binomial(e), ExpertMoments::Binomial(m))
        }
        (Experts::Markov(v), Outcomes::Categorical { series, n_states }) => {
            let history = v[0].history();
            let d0 = prior.markov.as_ref().unwrap();
            let mut pooled = vec![DMatrix::zeros(d0.nrows(), d0.ncols()); g_count];
            for (i, &z) in labels.iter().enumerate() {
                let cov = history.covariate_column().map(|c| data.covariates()[(i, c)]);
                pooled[z] += markov_counts(&series[i], history, *n_states, cov)?;
            }
            let mut out = Vec::with_capacity(g_count);
            let mut alphas = Vec::with_capacity(g_count);
            for c in &pooled {
                out.push(markov_dirichlet_draw(c, d0, history, rng)?);
                alphas.push(d0 + c);
            }
            (Experts::Markov(out), ExpertMoments::Markov(alphas))
        }
        (Experts::PlackettLuce(v), Outcomes::Rankings { ballots, .. }) => {
            let mut out = Vec::with_capacity(g_count);
            for (g, e) in v.iter().enumerate() {
                let PlSupport::Fixed(p) = e.support() else {
                    return Err(MoeError::Unsupported(
                        "Bayesian inference for covariate-linked Plackett-Luce experts".into(),
                    ));
                };
                let mine: Vec<&Vec<usize>> = labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &z)| z == g)
                    .map(|(i, _)| &ballots[i])
                    .collect();
                out.push(plackett_luce_gibbs(&mine, p.as_slice(), prior.plackett_luce, rng)?);
            }
            (Experts::PlackettLuce(out), ExpertMoments::Unavailable)
        }
        _ => return Err(MoeError::InvalidData("outcome type does not match the family".into())),
    })
}

/// One sweep: experts | z, then z | θ, then weights or gating | z.
/// Returns the conditional moments of the sweep.
pub fn gibbs_sweep<R: rand::Rng + ?Sized>(
    state: &mut SweepState,
    data: &Dataset,
    prior: &PriorSpec,
    cfg: &ChainConfig,
    rng: &mut R,
) -> Result<DrawMoments> {
    let g_count = state.model.components();
    let variant = state.model.variant();
    let labels: &[usize] = if cfg.prior_only { &[] } else { state.allocation.labels() };
    let (experts, expert_moments) = expert_draw(state.model.experts(), data, labels, prior, rng)?;
    state.model = state.model.with_experts(experts)?;
    if g_count > 1 && !cfg.fix_allocations {
        state.allocation = if cfg.prior_only {
            draw_allocations_prior(&state.model, data, rng)?
        } else {
            draw_allocations(&state.model, data, rng)?
        };
    }
    let mut moments = DrawMoments {
        weights: None,
        gating: None,
        experts: expert_moments,
    };
    match state.model.weights() {
        Weights::Fixed(_) => {
            let alpha: Vec<f64> = state
                .allocation
                .counts()
                .iter()
                .map(|&c| prior.weights + c as f64)
                .collect();
            let eta = stats::dirichlet_sample(&alpha, rng);
            state.model = state.model.with_weights(Weights::Fixed(DVector::from_vec(eta)))?;
            moments.weights = Some(alpha);
        }
        Weights::Gating(gating) if g_count > 1 => {
            let gp = prior.gating.as_ref().unwrap();
            let z = state.allocation.labels();
            let design = data.design();
            let (new, flags) = match cfg.gating_sampler {
                GatingSampler::Mh => {
                    mh_update_gamma(gating, z, design, gp, state.proposal.as_ref().unwrap(), rng)?
                }
                GatingSampler::DrumMh | GatingSampler::DrumAux => {
                    let table = (cfg.gating_sampler == GatingSampler::DrumAux).then(logistic_scale_mixture);
                    let (new, drum, conds, flags) = drum_update_gamma(gating, z, design, gp, table, rng)?;
                    let p = design.ncols();
                    let m = (g_count - 1) * p;
                    let mut mean = DVector::zeros(m);
                    let mut cov = DMatrix::zeros(m, m);
                    for (k, c) in conds.iter().enumerate() {
                        mean.rows_mut(k * p, p).copy_from(&c.mean);
                        cov.view_mut((k * p, k * p), (p, p)).copy_from(&c.cov);
                    }
                    moments.gating = Some((mean, cov));
                    state.drum = Some(drum);
                    (new, flags)
                }
            };
            for (k, f) in flags.iter().enumerate() {
                state.proposed[k + 1] += 1;
                state.accepted[k + 1] += *f as usize;
            }
            state.model = state.model.with_weights(Weights::Gating(new))?;
        }
        Weights::Gating(_) => {}
    }
    debug_assert_eq!(state.model.variant(), variant);
    Ok(moments)
}

fn initial_state(data: &Dataset, cfg: &ChainConfig, prior: &PriorSpec, rng: &mut ChaCha8Rng) -> Result<SweepState> {
    let g = cfg.components;
    let linked = cfg.family == Family::PlackettLuce && cfg.variant.experts_use_covariates();
    let history = match (cfg.family, cfg.history) {
        (Family::Markov, Some(h)) => Some(h),
        (Family::Markov, None) if cfg.variant.experts_use_covariates() => {
            Some(History::PrevStateCovariate { column: 0 })
        }
        _ => None,
    };
    let template = Experts::template(cfg.family, g, data, linked, history)?;
    let weights = if cfg.variant.gating_uses_covariates() {
        Weights::Gating(Gating::zeros(g, data.q() + 1))
    } else {
        Weights::uniform(g)
    };
    let base = MeModel::new(cfg.variant, weights, template)?;
    base.check_data(data)?;
    let n = data.n();
    let random_labels = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut v: Vec<usize> = (0..n).map(|i| i % g).collect();
        v.shuffle(rng);
        v
    };
    let (model, labels) = match &cfg.init {
        ChainInit::Model(m) => {
            m.check_data(data)?;
            let z = if g > 1 && !cfg.prior_only {
                draw_allocations(m, data, rng)?.labels().to_vec()
            } else {
                random_labels(rng)
            };
            ((**m).clone(), z)
        }
        ChainInit::Allocations(z) => (base, z.clone()),
        ChainInit::Auto => {
            let mut em = EmConfig::new(cfg.variant, cfg.family, g).with_seed(cfg.seed);
            em.history = history;
            em.compute_se = false;
            em.max_iter = 200;
            em.on_degenerate = OnDegenerate::Restart;
            em.init = Init::Auto;
            match ecm_fit(data, &em) {
                Ok(fit) if !cfg.prior_only => (fit.model, fit.map_assignment),
                Ok(_) => (base, random_labels(rng)),
                Err(e) => {
                    debug!("EM initialization failed ({e}); starting from random allocations");
                    (base, random_labels(rng))
                }
            }
        }
    };
    let allocation = Allocation::new(labels, g)?;
    let _ = prior;
    SweepState::new(model, allocation, data)
}

/// Runs one seeded chain. Burn-in sweeps are discarded before relabeling or
/// moment storage; during burn-in the random-walk scale is adapted towards a
/// 20–40% acceptance rate.
pub fn run_chain(data: &Dataset, prior: &PriorSpec, cfg: &ChainConfig) -> Result<PosteriorChain> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = initial_state(data, cfg, prior, &mut rng)?;
    let prior = prior.resolve(state.model.experts(), data)?;
    if cfg.store_moments && cfg.permute && state.model.components() > 1 {
        let needed = 100 * (1..=state.model.components()).product::<usize>();
        let retained = (cfg.iters - cfg.burnin) / cfg.thin;
        if retained < needed {
            warn!("{retained} retained draws for importance sampling; at least {needed} recommended");
        }
    }
    let g = state.model.components();
    let mut draws = Vec::with_capacity((cfg.iters - cfg.burnin) / cfg.thin);
    let mut window_acc = vec![0usize; g];
    let mut window_prop = vec![0usize; g];
    for it in 0..cfg.iters {
        if it == cfg.burnin {
            state.accepted.iter_mut().for_each(|a| *a = 0);
            state.proposed.iter_mut().for_each(|a| *a = 0);
        }
        let before = (state.accepted.clone(), state.proposed.clone());
        let moments = gibbs_sweep(&mut state, data, &prior, cfg, &mut rng)?;
        if it < cfg.burnin && cfg.gating_sampler == GatingSampler::Mh {
            if let Some(prop) = state.proposal.as_mut() {
                for k in 1..g {
                    window_acc[k] += state.accepted[k] - before.0[k];
                    window_prop[k] += state.proposed[k] - before.1[k];
                    if window_prop[k] == 50 {
                        let rate = window_acc[k] as f64 / 50.0;
                        if rate < 0.2 {
                            prop.scales[k] *= 0.7;
                        } else if rate > 0.4 {
                            prop.scales[k] *= 1.4;
                        }
                        window_acc[k] = 0;
                        window_prop[k] = 0;
                    }
                }
            }
        }
        let sigma = if cfg.permute && g > 1 {
            let (m, a, s) = random_permutation_step(&state.model, &state.allocation, &mut rng)?;
            state.model = m;
            state.allocation = a;
            if let Some(d) = state.drum.as_mut() {
                // utilities refer to the old labels; they are redrawn next sweep
                d.lambda = state.model.log_weight_matrix(data)?.map(f64::exp);
            }
            s
        } else {
            Permutation::identity(g)
        };
        if it >= cfg.burnin && (it - cfg.burnin) % cfg.thin == 0 {
            let loglik = state.model.log_likelihood_terms(data)?.iter().sum();
            draws.push(Draw {
                model: state.model.clone(),
                allocation: cfg.store_allocations.then(|| state.allocation.clone()),
                loglik,
                moments: cfg.store_moments.then(|| moments.relabel(&sigma)),
                permutation: sigma,
            });
        }
    }
    let acceptance = (1..g)
        .map(|k| {
            if state.proposed[k] == 0 {
                f64::NAN
            } else {
                state.accepted[k] as f64 / state.proposed[k] as f64
            }
        })
        .collect();
    Ok(PosteriorChain {
        draws,
        config: cfg.clone(),
        prior,
        acceptance,
    })
}

/// Independent chains in parallel; chain c is seeded with `derive_seed(cfg.seed, c)`.
pub fn run_chains(data: &Dataset, prior: &PriorSpec, cfg: &ChainConfig, n_chains: usize) -> Result<Vec<PosteriorChain>> {
    (0..n_chains)
        .into_par_iter()
        .map(|c| {
            let mut cc = cfg.clone();
            cc.seed = derive_seed(cfg.seed, c as u64);
            run_chain(data, prior, &cc)
        })
        .collect()
}
