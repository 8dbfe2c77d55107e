use nalgebra::DVector;
use serde_json::{json, Value};

use moe::em::{crosstab, multi_start, EmConfig, FitResult};
use moe::mcmc::{psrf, resolve_label_switching, run_chains, summarize, ChainConfig, PosteriorChain, PriorSpec};
use moe::modelsel::{aicm, bic};
use moe::{params, MeModel, Variant};

use crate::config::{Method, Problem, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, g17, versioned, write_csv, write_json};
use crate::paramsfile::to_params;

pub fn run_em(problem: &Problem, cfg: &RunConfig, variant: Variant, g: usize) -> CliResult<FitResult> {
    if cfg.restarts == 0 {
        return Err(CliError::input("--restarts must be at least 1"));
    }
    let mut em = EmConfig::new(variant, problem.family, g).with_seed(cfg.seed.unwrap_or(1));
    em.tol = cfg.tol;
    em.max_iter = cfg.max_iter;
    em.history = problem.history;
    Ok(multi_start(&problem.data, &em, cfg.restarts)?)
}

pub fn run_mcmc(
    problem: &Problem,
    cfg: &RunConfig,
    variant: Variant,
    g: usize,
    store_moments: bool,
) -> CliResult<(Vec<PosteriorChain>, PriorSpec)> {
    cfg.validate_mcmc()?;
    let mut cc = ChainConfig::new(variant, problem.family, g);
    cc.iters = cfg.iters;
    cc.burnin = cfg.burnin;
    cc.thin = cfg.thin;
    cc.gating_sampler = cfg.sampler()?;
    cc.seed = cfg.require_seed("MCMC")?;
    cc.history = problem.history;
    cc.store_moments = store_moments;
    let prior = cfg.prior(problem)?;
    Ok((run_chains(&problem.data, &prior, &cc, cfg.chains)?, prior))
}

/// Single model settings for `fit` and `diagnose`.
pub fn single_model(problem: &Problem) -> CliResult<(Variant, usize)> {
    match (problem.variants.as_slice(), problem.components.as_slice()) {
        ([v], [g]) => Ok((*v, *g)),
        _ => Err(CliError::input("give a single variant and component count (use `select` to compare several)")),
    }
}

/// Values of the column to cross-tabulate: `--crosstab`, else the first
/// covariate when it takes at most 12 distinct values.
fn crosstab_column(problem: &Problem, cfg: &RunConfig) -> CliResult<Option<(String, Vec<f64>)>> {
    let x = problem.data.covariates();
    if let Some(name) = &cfg.crosstab {
        if let Some(k) = problem.covariate_names.iter().position(|c| c == name) {
            return Ok(Some((name.clone(), x.column(k).iter().copied().collect())));
        }
        let table = problem
            .table
            .as_ref()
            .ok_or_else(|| CliError::input(format!("no column `{name}` to cross-tabulate")))?;
        return Ok(Some((name.clone(), table.numeric_column(table.column(name)?)?)));
    }
    let Some(name) = problem.covariate_names.first() else { return Ok(None) };
    let col: Vec<f64> = x.column(0).iter().copied().collect();
    let mut levels = col.clone();
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup();
    Ok((levels.len() <= 12).then(|| (name.clone(), col)))
}

pub fn fit_json(problem: &Problem, cfg: &RunConfig, fit: &FitResult) -> CliResult<Value> {
    let model = &fit.model;
    let g = model.components();
    let mut sizes = vec![0usize; g];
    for &z in &fit.map_assignment {
        sizes[z] += 1;
    }
    let ses: Vec<Value> = match &fit.std_errors {
        Some(s) => s
            .names
            .iter()
            .zip(&s.estimates)
            .zip(&s.se)
            .map(|((n, e), se)| json!({"name": n, "estimate": e, "se": se}))
            .collect(),
        None => Vec::new(),
    };
    let table = match crosstab_column(problem, cfg)? {
        Some((name, col)) => {
            let (levels, counts) = crosstab(&fit.map_assignment, g, &col);
            json!({"covariate": name, "levels": levels, "counts": counts})
        }
        None => Value::Null,
    };
    let restarts: Vec<Value> = fit
        .restarts
        .iter()
        .map(|r| {
            json!({"seed": r.seed, "loglik": r.loglik, "converged": r.converged,
                   "iterations": r.iterations, "error": r.error})
        })
        .collect();
    Ok(versioned(json!({
        "command": "fit",
        "method": "em",
        "family": model.family().name(),
        "variant": model.variant().letter().to_string(),
        "components": g,
        "n": problem.data.n(),
        "seed": fit.seed,
        "params": to_params(model, &problem.covariate_names),
        "loglik": fit.loglik,
        "loglik_trace": fit.loglik_trace,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "free_parameters": params::free_parameter_count(model),
        "bic": bic(fit, &problem.data).ok(),
        "std_errors": ses,
        "map_labels": fit.map_assignment.iter().map(|z| z + 1).collect::<Vec<_>>(),
        "component_sizes": sizes,
        "crosstab": table,
        "separation": fit.separation,
        "notes": fit.notes.iter().map(|n| format!("{n:?}")).collect::<Vec<_>>(),
        "restarts": restarts,
    })))
}

/// Pooled draws of every chain, label-switching resolved when G > 1.
pub fn relabeled_models(models: &[MeModel], seed: u64) -> CliResult<(Vec<MeModel>, f64)> {
    if models.first().is_none_or(|m| m.components() == 1) {
        return Ok((models.to_vec(), 0.0));
    }
    let r = resolve_label_switching(models, false, seed)?;
    let flagged = r.flagged_fraction();
    Ok((r.models, flagged))
}

pub fn draw_rows(chains: &[Vec<MeModel>], logliks: Option<&[Vec<f64>]>) -> (Vec<String>, Vec<Vec<String>>) {
    let names = chains.iter().flatten().next().map(params::param_names).unwrap_or_default();
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    if logliks.is_some() {
        header.push("loglik".into());
    }
    header.extend(names);
    let mut rows = Vec::new();
    for (c, ms) in chains.iter().enumerate() {
        for (d, m) in ms.iter().enumerate() {
            let mut r = vec![(c + 1).to_string(), (d + 1).to_string()];
            if let Some(ll) = logliks {
                r.push(g17(ll[c][d]));
            }
            r.extend(params::to_vector(m).iter().map(|&v| g17(v)));
            rows.push(r);
        }
    }
    (header, rows)
}

pub fn mcmc_summary_json(problem: &Problem, cfg: &RunConfig, chains: &[PosteriorChain]) -> CliResult<Value> {
    let seed = chains[0].config.seed;
    let pooled: Vec<MeModel> = chains.iter().flat_map(|c| c.models()).collect();
    let (relabeled, flagged) = relabeled_models(&pooled, seed)?;
    let summary = summarize(&relabeled)?;
    let parameters: Vec<Value> = summary
        .iter()
        .map(|s| {
            json!({"name": s.name, "mean": s.mean, "sd": s.sd, "mc_se": s.mc_se,
                   "hpd95": [s.hpd_lower, s.hpd_upper]})
        })
        .collect();
    let psrf_values = if chains.len() > 1 {
        let lens: Vec<usize> = chains.iter().map(|c| c.draws.len()).collect();
        let vecs: Vec<DVector<f64>> = relabeled.iter().map(params::to_vector).collect();
        let mut out = Vec::new();
        for (k, s) in summary.iter().enumerate() {
            let mut per_chain = Vec::new();
            let mut start = 0;
            for &l in &lens {
                per_chain.push(vecs[start..start + l].iter().map(|v| v[k]).collect::<Vec<f64>>());
                start += l;
            }
            out.push(json!({"name": s.name, "psrf": psrf(&per_chain).ok()}));
        }
        Value::from(out)
    } else {
        Value::Null
    };
    let logliks: Vec<f64> = chains.iter().flat_map(|c| c.logliks()).collect();
    let mean: DVector<f64> = DVector::from_iterator(summary.len(), summary.iter().map(|s| s.mean));
    let mean_model = params::from_vector(&relabeled[0], &mean).ok();
    let model = &relabeled[0];
    Ok(versioned(json!({
        "command": "fit",
        "method": "mcmc",
        "family": model.family().name(),
        "variant": model.variant().letter().to_string(),
        "components": model.components(),
        "n": problem.data.n(),
        "seed": seed,
        "chains": chains.len(),
        "iters": cfg.iters,
        "burnin": cfg.burnin,
        "thin": cfg.thin,
        "gating_sampler": cfg.gating_sampler,
        "draws_per_chain": chains.iter().map(|c| c.draws.len()).collect::<Vec<_>>(),
        "acceptance": chains.iter().map(|c| c.acceptance.clone()).collect::<Vec<_>>(),
        "relabeling_flagged_fraction": flagged,
        "parameters": parameters,
        "psrf": psrf_values,
        "aicm": aicm(&logliks).ok(),
        "params": mean_model.map(|m| to_params(&m, &problem.covariate_names)),
    })))
}

pub fn cmd_fit(cfg: &RunConfig) -> CliResult<String> {
    let problem = cfg.problem()?;
    let (variant, g) = single_model(&problem)?;
    ensure_dir(&cfg.out)?;
    match cfg.method {
        Method::Em => {
            let fit = run_em(&problem, cfg, variant, g)?;
            write_json(&cfg.out.join("fit.json"), &fit_json(&problem, cfg, &fit)?)?;
            write_json(&cfg.out.join("params.json"), &to_params(&fit.model, &problem.covariate_names))?;
            if !fit.converged {
                log::warn!("EM stopped after {} iterations without converging", fit.iterations);
            }
            Ok(format!(
                "EM {}: loglik {:.4} after {} iterations (converged: {})",
                problem.family, fit.loglik, fit.iterations, fit.converged
            ))
        }
        Method::Mcmc => {
            let (chains, _) = run_mcmc(&problem, cfg, variant, g, false)?;
            let models: Vec<Vec<MeModel>> = chains.iter().map(|c| c.models()).collect();
            let logliks: Vec<Vec<f64>> = chains.iter().map(|c| c.logliks()).collect();
            let (header, rows) = draw_rows(&models, Some(&logliks));
            write_csv(&cfg.out.join("draws.csv"), &header, &rows)?;
            let summary = mcmc_summary_json(&problem, cfg, &chains)?;
            write_json(&cfg.out.join("summary.json"), &summary)?;
            if let Some(p) = summary.get("params").filter(|p| !p.is_null()) {
                write_json(&cfg.out.join("params.json"), p)?;
            }
            Ok(format!("MCMC {}: {} draws written to {}", problem.family, rows.len(), cfg.out.display()))
        }
    }
}
