//! Run configuration shared by every subcommand, and its resolution into a
//! dataset plus model specification.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use moe::experts::{BinomialPrior, History, PlPrior, RegressionPrior};
use moe::mcmc::prior::regression_mixture_preset;
use moe::mcmc::{GatingPrior, GatingSampler, PriorSpec};
use moe::presets::Preset;
use moe::{Dataset, Family, MeModel, Variant};

use crate::data::{dataset_from_table, read_table, DataSpec};
use crate::error::{CliError, CliResult};
use crate::paramsfile::parse_variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Em,
    Mcmc,
}

#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// Expert family: gaussian, regression, binomial, plackett-luce, markov
    #[arg(long)]
    pub family: Option<String>,
    /// Model variant a, b, c or d (comma-separated list for `select`)
    #[arg(long, value_delimiter = ',')]
    pub variant: Vec<String>,
    /// Number of components: `2`, a list `1,2,3` or a range `1-4`
    #[arg(long)]
    pub components: Option<String>,
    #[arg(long, value_enum, default_value = "em")]
    pub method: Method,
    /// MCMC sweeps, burn-in included
    #[arg(long, default_value_t = 15_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 5_000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    /// Independent MCMC chains
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    /// EM starts; the best log-likelihood is kept
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// EM convergence threshold on the log-likelihood change
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed for preset data when it should differ from --seed
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// mh, drum-mh or drum-aux
    #[arg(long, default_value = "drum-aux")]
    pub gating_sampler: String,
    /// `default`, `regression-mixture`, or a JSON prior file
    #[arg(long)]
    pub prior: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Response column names (defaults depend on the family)
    #[arg(long, value_delimiter = ',')]
    pub response: Option<Vec<String>>,
    /// Covariate column names
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Named simulation setup (see `moe simulate --help`)
    #[arg(long)]
    pub preset: Option<String>,
    /// Number of observations to simulate
    #[arg(long)]
    pub n: Option<usize>,
    /// Parameter file to simulate from
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Binomial trials T
    #[arg(long)]
    pub trials: Option<u32>,
    /// Number of Markov states (default: largest state seen)
    #[arg(long)]
    pub states: Option<usize>,
    /// Number of ranking candidates (default: largest index seen)
    #[arg(long)]
    pub items: Option<usize>,
    /// Markov history: prev, prev-covariate, prev-time, prev-time-covariate
    #[arg(long)]
    pub history: Option<String>,
    /// Binary covariate used by a covariate-indexed history
    #[arg(long)]
    pub history_covariate: Option<String>,
    /// Transitions per simulated series
    #[arg(long, default_value_t = 4)]
    pub transitions: usize,
    /// Ballot length for simulated rankings (full rankings by default)
    #[arg(long)]
    pub ballot_len: Option<usize>,
    /// Covariate column to cross-tabulate against MAP labels
    #[arg(long)]
    pub crosstab: Option<String>,
    /// Criterion for `select` winners: bic, aicm, marglik or all
    #[arg(long, default_value = "all")]
    pub criterion: String,
    /// Importance-sampling draws for the marginal likelihood
    #[arg(long, default_value_t = 5_000)]
    pub is_draws: usize,
    /// Skip the chain and report the condition checks only
    #[arg(long)]
    pub conditions_only: bool,
    /// Mode-census functional: auto, coef:K or feature:K
    #[arg(long, default_value = "auto")]
    pub functional: String,
}

/// Accepts the descriptive preset names and the experiment aliases.
pub fn parse_preset(s: &str) -> CliResult<Preset> {
    let alias = match s.to_ascii_lowercase().as_str() {
        "sec2.2-gaussian" => Some(Preset::GaussianGating),
        "sec5.1-binomial-t2" => Some(Preset::BinomialT2),
        "sec5.1-binomial-t5" => Some(Preset::BinomialT5),
        "sec5.2-design1" => Some(Preset::RegressionDesign1),
        "sec5.2-design2" => Some(Preset::RegressionDesign2),
        _ => None,
    };
    alias.or_else(|| Preset::from_name(s)).ok_or_else(|| {
        let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
        CliError::input(format!("unknown preset `{s}` (known: {})", names.join(", ")))
    })
}

pub fn parse_components(s: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::input(format!("cannot read components `{s}`"));
    let out: Vec<usize> = if let Some((a, b)) = s.split_once('-') {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if out.is_empty() || out.contains(&0) {
        return Err(CliError::input("components must be at least 1"));
    }
    Ok(out)
}

/// A dataset together with the model specification to apply to it.
#[derive(Debug, Clone)]
pub struct Problem {
    pub data: Dataset,
    pub covariate_names: Vec<String>,
    pub family: Family,
    pub variants: Vec<Variant>,
    pub components: Vec<usize>,
    pub history: Option<History>,
    /// Generating parameters when the data come from a preset.
    pub truth: Option<MeModel>,
    pub preset: Option<Preset>,
    /// Raw CSV cells, for cross-tabulating columns outside the model.
    pub table: Option<crate::data::Table>,
}

impl RunConfig {
    pub fn require_seed(&self, what: &str) -> CliResult<u64> {
        self.seed.ok_or_else(|| CliError::input(format!("--seed is required for {what}")))
    }

    pub fn sampler(&self) -> CliResult<GatingSampler> {
        GatingSampler::from_name(&self.gating_sampler)
            .ok_or_else(|| CliError::input(format!("unknown gating sampler `{}`", self.gating_sampler)))
    }

    pub fn validate_mcmc(&self) -> CliResult<()> {
        if self.burnin >= self.iters {
            return Err(CliError::input(format!(
                "--burnin {} must be smaller than --iters {}",
                self.burnin, self.iters
            )));
        }
        if self.thin == 0 || self.chains == 0 {
            return Err(CliError::input("--thin and --chains must be at least 1"));
        }
        Ok(())
    }

    fn history(&self, covariates: &[String]) -> CliResult<Option<History>> {
        let Some(name) = &self.history else { return Ok(None) };
        let column = match &self.history_covariate {
            Some(c) => covariates
                .iter()
                .position(|x| x == c)
                .ok_or_else(|| CliError::input(format!("history covariate `{c}` is not among --covariates")))?,
            None => 0,
        };
        History::from_name(name, column)
            .map(Some)
            .ok_or_else(|| CliError::input(format!("unknown history `{name}`")))
    }

    /// Loads `--data` or simulates `--preset`, and settles family, variants and G.
    pub fn problem(&self) -> CliResult<Problem> {
        if let Some(name) = &self.preset {
            if self.data.is_some() {
                return Err(CliError::input("give either --preset or --data, not both"));
            }
            let preset = parse_preset(name)?;
            let seed = self
                .data_seed
                .or(self.seed)
                .ok_or_else(|| CliError::input("--seed is required to simulate preset data"))?;
            let n = self.n.unwrap_or(preset.default_n());
            let (data, _) = preset.simulate(n, seed)?;
            let truth = preset.truth()?;
            let family = match &self.family {
                Some(f) => parse_family(f)?,
                None => truth.family(),
            };
            let variants = if self.variant.is_empty() {
                vec![truth.variant()]
            } else {
                self.variant.iter().map(|v| parse_variant(v)).collect::<CliResult<_>>()?
            };
            let components = match &self.components {
                Some(c) => parse_components(c)?,
                None => vec![truth.components()],
            };
            let covariate_names = preset.covariate_name().into_iter().map(String::from).collect::<Vec<_>>();
            return Ok(Problem {
                history: self.history(&covariate_names)?,
                data,
                covariate_names,
                family,
                variants,
                components,
                truth: Some(truth),
                preset: Some(preset),
                table: None,
            });
        }
        let path = self.data.as_ref().ok_or_else(|| CliError::input("need --data or --preset"))?;
        let family = parse_family(self.family.as_deref().ok_or_else(|| CliError::input("--family is required with --data"))?)?;
        let table = read_table(path)?;
        let spec = DataSpec {
            response: self.response.clone(),
            covariates: self.covariates.clone(),
            trials: self.trials,
            states: self.states,
            items: self.items,
        };
        let data = dataset_from_table(&table, family, &spec)?;
        let variants = if self.variant.is_empty() {
            // covariates, when declared, go where the family can use them
            vec![match (self.covariates.is_empty(), family) {
                (true, _) => Variant::A,
                (false, Family::GaussianRegression) => Variant::B,
                (false, _) => Variant::C,
            }]
        } else {
            self.variant.iter().map(|v| parse_variant(v)).collect::<CliResult<_>>()?
        };
        let components = parse_components(self.components.as_deref().unwrap_or("2"))?;
        Ok(Problem {
            history: self.history(&self.covariates)?,
            data,
            covariate_names: self.covariates.clone(),
            family,
            variants,
            components,
            truth: None,
            preset: None,
            table: Some(table),
        })
    }

    /// The prior to use: `--prior` if given, the regression preset for the
    /// regression presets, otherwise the defaults.
    pub fn prior(&self, problem: &Problem) -> CliResult<PriorSpec> {
        let name = match (&self.prior, problem.preset) {
            (Some(p), _) => p.as_str(),
            (None, Some(Preset::RegressionDesign1 | Preset::RegressionDesign2)) => "regression-mixture",
            (None, _) => "default",
        };
        match name {
            "default" => Ok(PriorSpec::default()),
            "regression-mixture" => Ok(regression_mixture_preset(&problem.data)?),
            path => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read prior `{path}`: {e}")))?;
                let file: PriorFile = serde_json::from_str(&text).map_err(|e| CliError::input(format!("{path}: {e}")))?;
                file.to_spec(problem.data.q() + 1)
            }
        }
    }
}

pub fn parse_family(s: &str) -> CliResult<Family> {
    Family::from_name(s).ok_or_else(|| CliError::input(format!("unknown family `{s}`")))
}

/// Prior overrides read from JSON; unset blocks keep their defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorFile {
    /// Symmetric Dirichlet parameter for covariate-free weights.
    pub weights: Option<f64>,
    /// γ_g ~ N(0, s²·I).
    pub gating_sd: Option<f64>,
    /// Beta(a, b).
    pub binomial: Option<[f64; 2]>,
    /// Gamma(shape, rate) on support parameters.
    pub plackett_luce: Option<[f64; 2]>,
    pub regression: Option<RegressionPriorFile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionPriorFile {
    /// β ~ N(0, v·I).
    pub coef_var: f64,
    /// σ² ~ IG(shape, scale).
    pub shape: f64,
    pub scale: f64,
}

impl PriorFile {
    fn to_spec(&self, p: usize) -> CliResult<PriorSpec> {
        let mut spec = PriorSpec::default();
        if let Some(w) = self.weights {
            spec.weights = w;
        }
        if let Some(s) = self.gating_sd {
            spec.gating = Some(GatingPrior {
                mean: DVector::zeros(p),
                cov: DMatrix::identity(p, p) * (s * s),
            });
        }
        if let Some([a, b]) = self.binomial {
            spec.binomial = BinomialPrior { a, b };
        }
        if let Some([shape, rate]) = self.plackett_luce {
            spec.plackett_luce = PlPrior { shape, rate };
        }
        if let Some(r) = &self.regression {
            spec.regression = Some(RegressionPrior {
                coef_mean: DVector::zeros(p),
                coef_cov: DMatrix::identity(p, p) * r.coef_var,
                shape: r.shape,
                scale: r.scale,
            });
        }
        Ok(spec)
    }
}
