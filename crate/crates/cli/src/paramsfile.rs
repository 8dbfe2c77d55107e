//! Model parameters as JSON: written by `simulate` and `fit`, read by `simulate --params`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use moe::experts::{
    BinomialExpert, Experts, GaussianExpert, History, MarkovExpert, PlSupport, PlackettLuceExpert, RegressionExpert,
};
use moe::{Family, Gating, MeModel, Variant, Weights};

use crate::error::{CliError, CliResult};
use crate::output::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub schema_version: u32,
    pub family: String,
    pub variant: String,
    pub components: usize,
    /// Covariate column names, in design order (intercept excluded).
    pub covariates: Vec<String>,
    /// Covariate-free mixing weights (variants a and b).
    pub weights: Option<Vec<f64>>,
    /// G × (q+1) gating coefficients, first row the zero baseline (variants c and d).
    pub gating: Option<Vec<Vec<f64>>>,
    pub experts: Vec<ExpertParams>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpertParams {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cov: Option<Vec<Vec<f64>>>,
    /// Intercept first, then one coefficient per covariate.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trials: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub history: Option<String>,
    /// 1-based position in `covariates` of the binary covariate a history uses.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub history_covariate: Option<usize>,
    /// Transition matrix, one row per history state.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub xi: Option<Vec<Vec<f64>>>,
    /// Fixed support over candidates 1..M.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub support: Option<Vec<f64>>,
    /// M × (q+1) covariate-linked support coefficients, first row zero.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub support_coef: Option<Vec<Vec<f64>>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(CliError::input(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

pub fn to_params(model: &MeModel, covariates: &[String]) -> ParamsFile {
    let (weights, gating) = match model.weights() {
        Weights::Fixed(eta) => (Some(eta.iter().copied().collect()), None),
        Weights::Gating(g) => (None, Some(rows(g.coef()))),
    };
    let experts = match model.experts() {
        Experts::Gaussian(v) => v
            .iter()
            .map(|e| ExpertParams {
                mean: Some(e.mean().iter().copied().collect()),
                cov: Some(rows(e.cov())),
                ..Default::default()
            })
            .collect(),
        Experts::Regression(v) => v
            .iter()
            .map(|e| ExpertParams {
                beta: Some(e.beta().iter().copied().collect()),
                sigma2: Some(e.sigma2()),
                ..Default::default()
            })
            .collect(),
        Experts::Binomial(v) => v
            .iter()
            .map(|e| ExpertParams {
                trials: Some(e.trials()),
                prob: Some(e.prob()),
                ..Default::default()
            })
            .collect(),
        Experts::Markov(v) => v
            .iter()
            .map(|e| ExpertParams {
                history: Some(e.history().name().to_string()),
                history_covariate: e.history().covariate_column().map(|c| c + 1),
                xi: Some(rows(e.xi())),
                ..Default::default()
            })
            .collect(),
        Experts::PlackettLuce(v) => v
            .iter()
            .map(|e| match e.support() {
                PlSupport::Fixed(p) => ExpertParams {
                    support: Some(p.iter().copied().collect()),
                    ..Default::default()
                },
                PlSupport::Linked(b) => ExpertParams {
                    support_coef: Some(rows(b)),
                    ..Default::default()
                },
            })
            .collect(),
    };
    ParamsFile {
        schema_version: SCHEMA_VERSION,
        family: model.family().name().to_string(),
        variant: model.variant().letter().to_string(),
        components: model.components(),
        covariates: covariates.to_vec(),
        weights,
        gating,
        experts,
    }
}

fn need<T: Clone>(v: &Option<T>, field: &str, g: usize) -> CliResult<T> {
    v.clone()
        .ok_or_else(|| CliError::input(format!("expert {} is missing `{field}`", g + 1)))
}

pub fn from_params(p: &ParamsFile) -> CliResult<MeModel> {
    let family = Family::from_name(&p.family).ok_or_else(|| CliError::input(format!("unknown family `{}`", p.family)))?;
    let variant = parse_variant(&p.variant)?;
    if p.experts.len() != p.components {
        return Err(CliError::input(format!(
            "{} experts listed for {} components",
            p.experts.len(),
            p.components
        )));
    }
    let weights = match (&p.weights, &p.gating) {
        (Some(w), None) => Weights::Fixed(DVector::from_vec(w.clone())),
        (None, Some(g)) => Weights::Gating(Gating::new(matrix(g, "gating")?)?),
        _ => return Err(CliError::input("exactly one of `weights` and `gating` must be given")),
    };
    let ex = &p.experts;
    let experts = match family {
        Family::Gaussian => Experts::Gaussian(
            ex.iter()
                .enumerate()
                .map(|(g, e)| {
                    let mean = DVector::from_vec(need(&e.mean, "mean", g)?);
                    let cov = matrix(&need(&e.cov, "cov", g)?, "cov")?;
                    Ok(GaussianExpert::new(mean, cov)?)
                })
                .collect::<CliResult<_>>()?,
        ),
        Family::GaussianRegression => Experts::Regression(
            ex.iter()
                .enumerate()
                .map(|(g, e)| {
                    Ok(RegressionExpert::new(
                        DVector::from_vec(need(&e.beta, "beta", g)?),
                        need(&e.sigma2, "sigma2", g)?,
                    )?)
                })
                .collect::<CliResult<_>>()?,
        ),
        Family::Binomial => Experts::Binomial(
            ex.iter()
                .enumerate()
                .map(|(g, e)| Ok(BinomialExpert::new(need(&e.trials, "trials", g)?, need(&e.prob, "prob", g)?)?))
                .collect::<CliResult<_>>()?,
        ),
        Family::Markov => Experts::Markov(
            ex.iter()
                .enumerate()
                .map(|(g, e)| {
                    let name = e.history.clone().unwrap_or_else(|| "prev".into());
                    let column = e.history_covariate.unwrap_or(1).saturating_sub(1);
                    let history = History::from_name(&name, column)
                        .ok_or_else(|| CliError::input(format!("unknown history `{name}`")))?;
                    Ok(MarkovExpert::new(history, matrix(&need(&e.xi, "xi", g)?, "xi")?)?)
                })
                .collect::<CliResult<_>>()?,
        ),
        Family::PlackettLuce => Experts::PlackettLuce(
            ex.iter()
                .enumerate()
                .map(|(g, e)| match (&e.support, &e.support_coef) {
                    (Some(s), None) => Ok(PlackettLuceExpert::new(DVector::from_vec(s.clone()))?),
                    (None, Some(b)) => Ok(PlackettLuceExpert::linked(matrix(b, "support_coef")?)?),
                    _ => Err(CliError::input(format!(
                        "expert {} needs exactly one of `support` and `support_coef`",
                        g + 1
                    ))),
                })
                .collect::<CliResult<_>>()?,
        ),
    };
    Ok(MeModel::new(variant, weights, experts)?)
}

pub fn parse_variant(s: &str) -> CliResult<Variant> {
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Variant::from_letter(c).ok_or_else(|| CliError::input(format!("unknown variant `{s}`"))),
        _ => Err(CliError::input(format!("unknown variant `{s}`"))),
    }
}

pub fn read_params(path: &std::path::Path) -> CliResult<ParamsFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}
