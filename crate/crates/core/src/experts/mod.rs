//! The five expert families and family-generic dispatch.

mod binomial;
mod gaussian;
mod markov;
mod plackett_luce;
mod regression;
mod simulate;

pub use binomial::*;
pub use gaussian::*;
pub use markov::*;
pub use plackett_luce::*;
pub use regression::*;
pub use simulate::{simulate, SimOptions};

use nalgebra::{DMatrix, DVector};

use crate::error::{MoeError, Result};
use crate::model::{Dataset, Family, Outcomes, Permutation, Variant};

/// Per-component expert parameters for one family.
#[derive(Debug, Clone, PartialEq)]
pub enum Experts {
    Gaussian(Vec<GaussianExpert>),
    Regression(Vec<RegressionExpert>),
    Binomial(Vec<BinomialExpert>),
    PlackettLuce(Vec<PlackettLuceExpert>),
    Markov(Vec<MarkovExpert>),
}

/// Non-fatal events raised by an M-step (regularization, pinned supports, capped coefficients).
#[derive(Debug, Clone, PartialEq)]
pub enum MStepNote {
    Regularized { component: usize, ridge: f64 },
    PinnedSupport { component: usize, candidates: Vec<usize> },
    CappedCoefficients { component: usize },
}

fn mismatch(family: Family, variant: Variant, reason: &str) -> MoeError {
    MoeError::Incompatible {
        family: family.name().to_string(),
        variant: variant.letter(),
        reason: reason.to_string(),
    }
}

impl Experts {
    pub fn len(&self) -> usize {
        match self {
            Experts::Gaussian(v) => v.len(),
            Experts::Regression(v) => v.len(),
            Experts::Binomial(v) => v.len(),
            Experts::PlackettLuce(v) => v.len(),
            Experts::Markov(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn family(&self) -> Family {
        match self {
            Experts::Gaussian(_) => Family::Gaussian,
            Experts::Regression(_) => Family::GaussianRegression,
            Experts::Binomial(_) => Family::Binomial,
            Experts::PlackettLuce(_) => Family::PlackettLuce,
            Experts::Markov(_) => Family::Markov,
        }
    }

    /// Whether these expert parameters carry covariate effects.
    pub fn uses_covariates(&self) -> bool {
        match self {
            Experts::Gaussian(_) | Experts::Binomial(_) => false,
            Experts::Regression(_) => true,
            Experts::PlackettLuce(v) => v.first().is_some_and(|e| e.is_linked()),
            Experts::Markov(v) => v.first().is_some_and(|e| e.history().uses_covariate()),
        }
    }

    pub fn check_variant(&self, variant: Variant) -> Result<()> {
        let family = self.family();
        match self {
            Experts::Gaussian(_) | Experts::Binomial(_) if variant.experts_use_covariates() => {
                return Err(mismatch(family, variant, "the family has no regression form"))
            }
            Experts::Regression(_) if !variant.experts_use_covariates() => {
                return Err(mismatch(family, variant, "regression experts need variant (b) or (d)"))
            }
            Experts::PlackettLuce(v) => {
                if v.iter().any(|e| e.is_linked() != variant.experts_use_covariates()) {
                    return Err(mismatch(
                        family,
                        variant,
                        "covariate-linked support belongs to variants (b)/(d), fixed support to (a)/(c)",
                    ));
                }
            }
            Experts::Markov(v) => {
                if v.iter().any(|e| e.history().uses_covariate() != variant.experts_use_covariates()) {
                    return Err(mismatch(
                        family,
                        variant,
                        "histories with a covariate belong to variants (b)/(d), others to (a)/(c)",
                    ));
                }
            }
            _ => {}
        }
        self.check_consistent()
    }

    fn check_consistent(&self) -> Result<()> {
        let same = match self {
            Experts::Gaussian(v) => v.windows(2).all(|w| w[0].dim() == w[1].dim()),
            Experts::Regression(v) => v.windows(2).all(|w| w[0].beta().len() == w[1].beta().len()),
            Experts::Binomial(v) => v.windows(2).all(|w| w[0].trials() == w[1].trials()),
            Experts::PlackettLuce(v) => v.windows(2).all(|w| {
                w[0].n_items() == w[1].n_items() && w[0].is_linked() == w[1].is_linked()
            }),
            Experts::Markov(v) => v
                .windows(2)
                .all(|w| w[0].history() == w[1].history() && w[0].xi().shape() == w[1].xi().shape()),
        };
        if same {
            Ok(())
        } else {
            Err(MoeError::Dimension("experts differ in shape across components".into()))
        }
    }

    pub fn check_data(&self, data: &Dataset, variant: Variant) -> Result<()> {
        let family = self.family();
        let wrong = || mismatch(family, variant, "outcome type does not match the family");
        match (self, data.outcomes()) {
            (Experts::Gaussian(v), Outcomes::Continuous(y)) => {
                if let Some(e) = v.first() {
                    if e.dim() != y.ncols() {
                        return Err(MoeError::Dimension(format!(
                            "{}-variate experts for {}-column outcomes",
                            e.dim(),
                            y.ncols()
                        )));
                    }
                }
            }
            (Experts::Regression(v), Outcomes::Continuous(y)) => {
                if y.ncols() != 1 {
                    return Err(MoeError::Dimension("regression experts need a scalar response".into()));
                }
                if let Some(e) = v.first() {
                    if e.beta().len() != data.q() + 1 {
                        return Err(MoeError::Dimension(format!(
                            "{} regression coefficients for {} design columns",
                            e.beta().len(),
                            data.q() + 1
                        )));
                    }
                }
            }
            (Experts::Binomial(v), Outcomes::Binomial { trials, .. }) => {
                if let Some(e) = v.first() {
                    if e.trials() != *trials {
                        return Err(MoeError::Dimension(format!(
                            "experts use {} trials, data {}",
                            e.trials(),
                            trials
                        )));
                    }
                }
            }
            (Experts::PlackettLuce(v), Outcomes::Rankings { n_items, .. }) => {
                if let Some(e) = v.first() {
                    if e.n_items() != *n_items {
                        return Err(MoeError::Dimension(format!(
                            "{} candidates in the experts, {} in the data",
                            e.n_items(),
                            n_items
                        )));
                    }
                    if let PlSupport::Linked(b) = e.support() {
                        if b.ncols() != data.q() + 1 {
                            return Err(MoeError::Dimension("support coefficients do not match the design".into()));
                        }
                    }
                }
            }
            (Experts::Markov(v), Outcomes::Categorical { series, n_states }) => {
                if let Some(e) = v.first() {
                    if e.n_states() != *n_states {
                        return Err(MoeError::Dimension(format!(
                            "{} states in the experts, {} in the data",
                            e.n_states(),
                            n_states
                        )));
                    }
                    let transitions = series.first().map(|s| s.len() - 1).unwrap_or(0);
                    let rows = e.history().n_rows(*n_states, transitions);
                    if rows != e.xi().nrows() {
                        return Err(MoeError::Dimension(format!(
                            "history implies {rows} rows for series of length {}, experts have {}",
                            transitions + 1,
                            e.xi().nrows()
                        )));
                    }
                    if let Some(col) = e.history().covariate_column() {
                        if col >= data.q() {
                            return Err(MoeError::Dimension(format!(
                                "history covariate column {} does not exist",
                                col + 1
                            )));
                        }
                        if data.covariates().column(col).iter().any(|&x| x != 0.0 && x != 1.0) {
                            return Err(MoeError::InvalidData("history covariate must be binary (0/1)".into()));
                        }
                    }
                }
            }
            _ => return Err(wrong()),
        }
        Ok(())
    }

    /// log f_g(y_i | x_i).
    pub fn log_density(&self, data: &Dataset, i: usize, g: usize) -> Result<f64> {
        let x = data.design_row(i);
        Ok(match (self, data.outcomes()) {
            (Experts::Gaussian(v), Outcomes::Continuous(y)) => v[g].logpdf(&y.row(i).transpose()),
            (Experts::Regression(v), Outcomes::Continuous(y)) => v[g].logpdf(y[(i, 0)], x.as_slice()),
            (Experts::Binomial(v), Outcomes::Binomial { counts, .. }) => v[g].logpmf(counts[i]),
            (Experts::PlackettLuce(v), Outcomes::Rankings { ballots, .. }) => {
                v[g].logprob(&ballots[i], x.as_slice())?
            }
            (Experts::Markov(v), Outcomes::Categorical { series, .. }) => {
                let cov = v[g].history().covariate_column().map(|c| data.covariates()[(i, c)]);
                v[g].logprob(&series[i], cov)?
            }
            _ => return Err(MoeError::InvalidData("outcome type does not match the family".into())),
        })
    }

    /// n × G matrix of log f_g(y_i | x_i).
    pub fn log_density_matrix(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let n = data.n();
        let g_count = self.len();
        let mut out = DMatrix::zeros(n, g_count);
        match (self, data.outcomes()) {
            (Experts::Gaussian(v), Outcomes::Continuous(y)) => {
                for i in 0..n {
                    let yi = y.row(i).transpose();
                    for (g, e) in v.iter().enumerate() {
                        out[(i, g)] = e.logpdf(&yi);
                    }
                }
            }
            (Experts::Markov(v), Outcomes::Categorical { series, n_states }) => {
                let history = v[0].history();
                for i in 0..n {
                    let cov = history.covariate_column().map(|c| data.covariates()[(i, c)]);
                    let counts = markov_counts(&series[i], history, *n_states, cov)?;
                    for (g, e) in v.iter().enumerate() {
                        out[(i, g)] = e.log_prob_counts(&counts);
                    }
                }
            }
            _ => {
                for i in 0..n {
                    for g in 0..g_count {
                        out[(i, g)] = self.log_density(data, i, g)?;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Reorders components so that component g of the result is component σ(g) of the input.
    pub fn relabel(&self, sigma: &Permutation) -> Result<Experts> {
        if sigma.len() != self.len() {
            return Err(MoeError::Dimension(format!(
                "permutation of {} labels applied to {} experts",
                sigma.len(),
                self.len()
            )));
        }
        Ok(match self {
            Experts::Gaussian(v) => Experts::Gaussian(sigma.apply(v)),
            Experts::Regression(v) => Experts::Regression(sigma.apply(v)),
            Experts::Binomial(v) => Experts::Binomial(sigma.apply(v)),
            Experts::PlackettLuce(v) => Experts::PlackettLuce(sigma.apply(v)),
            Experts::Markov(v) => Experts::Markov(sigma.apply(v)),
        })
    }

    /// Weighted M-step for every component given responsibilities (n × G).
    pub fn m_step(&self, data: &Dataset, resp: &DMatrix<f64>) -> Result<(Experts, Vec<MStepNote>)> {
        let g_count = self.len();
        let mut notes = Vec::new();
        let col = |g: usize| -> Vec<f64> { resp.column(g).iter().copied().collect() };
        let tag = |e: MoeError, g: usize| match e {
            MoeError::DegenerateComponent { size, .. } => MoeError::DegenerateComponent { component: g, size },
            other => other,
        };
        let experts = match (self, data.outcomes()) {
            (Experts::Gaussian(_), Outcomes::Continuous(y)) => {
                let mut out = Vec::with_capacity(g_count);
                for g in 0..g_count {
                    let up = gaussian_mstep(y, &col(g)).map_err(|e| tag(e, g))?;
                    if up.ridge > 0.0 {
                        notes.push(MStepNote::Regularized { component: g, ridge: up.ridge });
                    }
                    out.push(up.expert);
                }
                Experts::Gaussian(out)
            }
            (Experts::Regression(_), Outcomes::Continuous(y)) => {
                let yv: Vec<f64> = y.column(0).iter().copied().collect();
                let mut out = Vec::with_capacity(g_count);
                for g in 0..g_count {
                    let up = regression_mstep(data.design(), &yv, &col(g)).map_err(|e| tag(e, g))?;
                    if up.ridge > 0.0 {
                        notes.push(MStepNote::Regularized { component: g, ridge: up.ridge });
                    }
                    out.push(up.expert);
                }
                Experts::Regression(out)
            }
            (Experts::Binomial(_), Outcomes::Binomial { counts, trials }) => Experts::Binomial(
                (0..g_count)
                    .map(|g| binomial_mstep(counts, *trials, &col(g)).map_err(|e| tag(e, g)))
                    .collect::<Result<Vec<_>>>()?,
            ),
            (Experts::PlackettLuce(v), Outcomes::Rankings { ballots, n_items }) => {
                let mut out = Vec::with_capacity(g_count);
                for (g, cur) in v.iter().enumerate() {
                    let w = col(g);
                    match cur.support() {
                        PlSupport::Fixed(p) => {
                            let up = plackett_luce_mstep(ballots, &w, *n_items, Some(p.as_slice()))
                                .map_err(|e| tag(e, g))?;
                            if !up.pinned.is_empty() {
                                notes.push(MStepNote::PinnedSupport { component: g, candidates: up.pinned });
                            }
                            out.push(up.expert);
                        }
                        PlSupport::Linked(b) => {
                            let (e, capped) = plackett_luce_linked_mstep(ballots, data.design(), &w, b)?;
                            if capped {
                                notes.push(MStepNote::CappedCoefficients { component: g });
                            }
                            out.push(e);
                        }
                    }
                }
                Experts::PlackettLuce(out)
            }
            (Experts::Markov(v), Outcomes::Categorical { series, n_states }) => {
                let history = v[0].history();
                let counts = series
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let cov = history.covariate_column().map(|c| data.covariates()[(i, c)]);
                        markov_counts(s, history, *n_states, cov)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Experts::Markov(
                    v.iter()
                        .enumerate()
                        .map(|(g, e)| markov_mstep(&counts, &col(g), e))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            _ => return Err(MoeError::InvalidData("outcome type does not match the family".into())),
        };
        Ok((experts, notes))
    }

    /// Placeholder experts of the right shape for `family` (used to seed M-steps).
    pub fn template(family: Family, g_count: usize, data: &Dataset, linked: bool, history: Option<History>) -> Result<Experts> {
        let p = data.q() + 1;
        Ok(match (family, data.outcomes()) {
            (Family::Gaussian, Outcomes::Continuous(y)) => {
                let d = y.ncols();
                let e = GaussianExpert::new(DVector::zeros(d), DMatrix::identity(d, d))?;
                Experts::Gaussian(vec![e; g_count])
            }
            (Family::GaussianRegression, Outcomes::Continuous(_)) => {
                Experts::Regression(vec![RegressionExpert::new(DVector::zeros(p), 1.0)?; g_count])
            }
            (Family::Binomial, Outcomes::Binomial { trials, .. }) => {
                Experts::Binomial(vec![BinomialExpert::new(*trials, 0.5)?; g_count])
            }
            (Family::PlackettLuce, Outcomes::Rankings { n_items, .. }) => {
                let e = if linked {
                    PlackettLuceExpert::linked(DMatrix::zeros(*n_items, p))?
                } else {
                    PlackettLuceExpert::new(DVector::from_element(*n_items, 1.0 / *n_items as f64))?
                };
                Experts::PlackettLuce(vec![e; g_count])
            }
            (Family::Markov, Outcomes::Categorical { series, n_states }) => {
                let h = history.unwrap_or(History::PrevState);
                let t = series.first().map(|s| s.len() - 1).unwrap_or(1);
                Experts::Markov(vec![MarkovExpert::uniform(h, *n_states, t); g_count])
            }
            _ => {
                return Err(MoeError::InvalidData(format!(
                    "outcome type does not match the {} family",
                    family.name()
                )))
            }
        })
    }
}
