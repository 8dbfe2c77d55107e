use nalgebra::{DMatrix, DVector};

use crate::error::{MoeError, Result};
use crate::experts::{
    BinomialPrior, Experts, GaussianPrior, PlPrior, PlSupport, RegressionPrior,
};
use crate::model::{Dataset, MeModel, Outcomes, Weights};
use crate::stats;

/// γ_g ~ N(mean, cov) independently for every non-baseline component.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingPrior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GatingPrior {
    pub fn standard(p: usize) -> Self {
        GatingPrior {
            mean: DVector::zeros(p),
            cov: DMatrix::identity(p, p),
        }
    }
}

/// Priors for every parameter block. Family blocks left at `None` are filled by
/// [`PriorSpec::resolve`] with data-based defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub gaussian: Option<GaussianPrior>,
    pub regression: Option<RegressionPrior>,
    pub binomial: BinomialPrior,
    /// J × K Dirichlet parameters d₀ for transition rows (all ones by default).
    pub markov: Option<DMatrix<f64>>,
    pub plackett_luce: PlPrior,
    /// Symmetric Dirichlet parameter for covariate-free weights.
    pub weights: f64,
    /// Standard normal per coefficient by default.
    pub gating: Option<GatingPrior>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            gaussian: None,
            regression: None,
            binomial: BinomialPrior::default(),
            markov: None,
            plackett_luce: PlPrior::default(),
            weights: 1.0,
            gating: None,
        }
    }
}

impl PriorSpec {
    /// Fills unset blocks for the shape of `experts` on `data` and validates the result.
    pub fn resolve(&self, experts: &Experts, data: &Dataset) -> Result<PriorSpec> {
        let mut out = self.clone();
        let p = data.q() + 1;
        if out.gating.is_none() {
            out.gating = Some(GatingPrior::standard(p));
        }
        let gp = out.gating.as_ref().unwrap();
        if gp.mean.len() != p || gp.cov.shape() != (p, p) {
            return Err(MoeError::Dimension(format!("gating prior must be {p}-variate")));
        }
        stats::cholesky(&gp.cov, "gating prior covariance")?;
        if !(out.weights > 0.0) {
            return Err(MoeError::InvalidParameter("weight prior parameter must be positive".into()));
        }
        match (experts, data.outcomes()) {
            (Experts::Gaussian(_), Outcomes::Continuous(y)) => {
                let g = out.gaussian.get_or_insert_with(|| GaussianPrior::data_based(y));
                g.validate(y.ncols())?;
            }
            (Experts::Regression(_), Outcomes::Continuous(y)) => {
                let yv: Vec<f64> = y.column(0).iter().copied().collect();
                let r = out.regression.get_or_insert_with(|| RegressionPrior::default_for(p, &yv));
                r.validate(p)?;
            }
            (Experts::Binomial(_), _) => {
                if !(out.binomial.a > 0.0 && out.binomial.b > 0.0) {
                    return Err(MoeError::InvalidParameter("beta prior needs positive parameters".into()));
                }
            }
            (Experts::Markov(v), _) => {
                let shape = v[0].xi().shape();
                let d0 = out.markov.get_or_insert_with(|| DMatrix::from_element(shape.0, shape.1, 1.0));
                if d0.shape() != shape {
                    return Err(MoeError::Dimension(format!(
                        "transition prior is {}×{}, model needs {}×{}",
                        d0.nrows(),
                        d0.ncols(),
                        shape.0,
                        shape.1
                    )));
                }
                if d0.iter().any(|&a| !(a > 0.0)) {
                    return Err(MoeError::InvalidParameter("Dirichlet parameters must be positive".into()));
                }
            }
            (Experts::PlackettLuce(v), _) => {
                if v.iter().any(|e| e.is_linked()) {
                    return Err(MoeError::Unsupported(
                        "Bayesian inference for covariate-linked Plackett-Luce experts".into(),
                    ));
                }
                if !(out.plackett_luce.shape > 0.0 && out.plackett_luce.rate > 0.0) {
                    return Err(MoeError::InvalidParameter("gamma prior needs positive parameters".into()));
                }
            }
            _ => return Err(MoeError::InvalidData("outcome type does not match the family".into())),
        }
        Ok(out)
    }

    /// log p(θ) for a resolved prior.
    pub fn log_density(&self, model: &MeModel) -> Result<f64> {
        let missing = || MoeError::InvalidParameter("prior has not been resolved for this family".into());
        let mut lp = match model.weights() {
            Weights::Fixed(eta) => {
                let alpha = vec![self.weights; eta.len()];
                stats::dirichlet_logpdf(eta.as_slice(), &alpha)
            }
            Weights::Gating(g) => {
                let gp = self.gating.as_ref().ok_or_else(missing)?;
                let chol = stats::cholesky(&gp.cov, "gating prior covariance")?;
                (1..g.components())
                    .map(|k| stats::mvn_logpdf_chol(&g.coef().row(k).transpose(), &gp.mean, &chol))
                    .sum()
            }
        };
        match model.experts() {
            Experts::Gaussian(v) => {
                let pr = self.gaussian.as_ref().ok_or_else(missing)?;
                let mchol = stats::cholesky(&pr.mean_cov, "prior mean covariance")?;
                for e in v {
                    lp += stats::mvn_logpdf_chol(e.mean(), &pr.mean, &mchol);
                    if pr.known_cov.is_none() {
                        lp += stats::inv_wishart_logpdf(e.cov(), pr.df, &pr.scale)?;
                    }
                }
            }
            Experts::Regression(v) => {
                let pr = self.regression.as_ref().ok_or_else(missing)?;
                let chol = stats::cholesky(&pr.coef_cov, "regression prior covariance")?;
                for e in v {
                    lp += stats::mvn_logpdf_chol(e.beta(), &pr.coef_mean, &chol);
                    lp += stats::inv_gamma_logpdf(e.sigma2(), pr.shape, pr.scale);
                }
            }
            Experts::Binomial(v) => {
                for e in v {
                    lp += stats::beta_logpdf(e.prob(), self.binomial.a, self.binomial.b);
                }
            }
            Experts::Markov(v) => {
                let d0 = self.markov.as_ref().ok_or_else(missing)?;
                for e in v {
                    lp += crate::experts::markov_dirichlet_logpdf(e.xi(), d0);
                }
            }
            Experts::PlackettLuce(v) => {
                for e in v {
                    match e.support() {
                        PlSupport::Fixed(p) => {
                            let alpha = vec![self.plackett_luce.shape; p.len()];
                            lp += stats::dirichlet_logpdf(p.as_slice(), &alpha);
                        }
                        PlSupport::Linked(_) => {
                            return Err(MoeError::Unsupported(
                                "prior density for covariate-linked Plackett-Luce experts".into(),
                            ))
                        }
                    }
                }
            }
        }
        Ok(lp)
    }
}

/// The §5.2-style regression preset: weights D(4, 4), β ~ N(0, 100·I), σ² ~ IG(2.5, 1.25·s²_y).
pub fn regression_mixture_preset(data: &Dataset) -> Result<PriorSpec> {
    let y = data
        .continuous()
        .ok_or_else(|| MoeError::InvalidData("regression preset needs a continuous response".into()))?;
    let yv: Vec<f64> = y.column(0).iter().copied().collect();
    Ok(PriorSpec {
        regression: Some(RegressionPrior::default_for(data.q() + 1, &yv)),
        weights: 4.0,
        ..PriorSpec::default()
    })
}
