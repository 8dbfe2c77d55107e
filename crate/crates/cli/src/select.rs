use serde_json::{json, Value};

use moe::experts::{Experts, History};
use moe::modelsel::{aicm, bic, build_importance_density, exact_log_marglik_markov_g1, is_log_marglik, winner, Criterion};
use moe::stats::derive_seed;
use moe::{Family, Variant};

use crate::config::{Method, Problem, RunConfig};
use crate::error::{CliError, CliResult};
use crate::fit::{run_em, run_mcmc};
use crate::output::{ensure_dir, versioned, write_json};

#[derive(Debug, Clone, Default)]
struct Row {
    bic: Option<f64>,
    loglik: Option<f64>,
    aicm: Option<f64>,
    log_marglik: Option<f64>,
    log_marglik_se: Option<f64>,
    ess: Option<f64>,
    exact_log_marglik: Option<f64>,
    notes: Vec<String>,
}

fn criteria(cfg: &RunConfig) -> CliResult<Vec<Criterion>> {
    let all = match cfg.method {
        Method::Em => vec![Criterion::Bic],
        Method::Mcmc => vec![Criterion::Aicm, Criterion::LogMarglik],
    };
    match cfg.criterion.as_str() {
        "all" => Ok(all.clone()),
        "bic" => Ok(vec![Criterion::Bic]),
        "aicm" => Ok(vec![Criterion::Aicm]),
        "marglik" | "log-marglik" => Ok(vec![Criterion::LogMarglik]),
        c => Err(CliError::input(format!("unknown criterion `{c}`"))),
    }
    .and_then(|cs| {
        if cs.iter().all(|c| all.contains(c)) {
            Ok(cs)
        } else {
            Err(CliError::input(format!("criterion `{}` needs the other --method", cfg.criterion)))
        }
    })
}

fn evaluate(problem: &Problem, cfg: &RunConfig, variant: Variant, g: usize, index: usize) -> CliResult<Row> {
    let mut row = Row::default();
    match cfg.method {
        Method::Em => {
            let fit = run_em(problem, cfg, variant, g)?;
            row.loglik = Some(fit.loglik);
            if !fit.converged {
                return Err(CliError::Numerical(format!("EM did not converge in {} iterations", fit.iterations)));
            }
            row.bic = Some(bic(&fit, &problem.data)?);
        }
        Method::Mcmc => {
            let sub = RunConfig { seed: cfg.seed.map(|s| derive_seed(s, index as u64)), ..cfg.clone() };
            let want_is = problem.family != Family::PlackettLuce;
            let (chains, _) = run_mcmc(problem, &sub, variant, g, want_is)?;
            let logliks: Vec<f64> = chains.iter().flat_map(|c| c.logliks()).collect();
            row.aicm = Some(aicm(&logliks)?);
            if want_is {
                let q = build_importance_density(&chains[0], None)?;
                let est = is_log_marglik(&problem.data, &chains[0].prior, &q, cfg.is_draws, derive_seed(sub.seed.unwrap_or(0), 7))?;
                row.log_marglik = Some(est.log_marglik);
                row.log_marglik_se = Some(est.mc_se);
                row.ess = Some(est.ess);
            } else {
                row.notes.push("no importance-sampling marginal likelihood for Plackett-Luce experts".into());
            }
            if problem.family == Family::Markov && g == 1 {
                let prior = &chains[0].prior;
                let history = match chains[0].draws[0].model.experts() {
                    Experts::Markov(v) => v[0].history(),
                    _ => History::PrevState,
                };
                let d0 = prior.markov.clone().ok_or_else(|| CliError::Numerical("unresolved Markov prior".into()))?;
                row.exact_log_marglik = Some(exact_log_marglik_markov_g1(&problem.data, &d0, history)?);
            }
        }
    }
    Ok(row)
}

/// Fits every (variant, G) candidate and reports criterion values and winners.
pub fn cmd_select(cfg: &RunConfig) -> CliResult<String> {
    let problem = cfg.problem()?;
    let crits = criteria(cfg)?;
    let candidates: Vec<(Variant, usize)> = problem
        .variants
        .iter()
        .flat_map(|&v| problem.components.iter().map(move |&g| (v, g)))
        .collect();
    if candidates.len() < 2 {
        return Err(CliError::input("select needs at least two candidates (several --components or --variant values)"));
    }
    if cfg.method == Method::Mcmc {
        cfg.require_seed("MCMC")?;
    }
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for (k, &(v, g)) in candidates.iter().enumerate() {
        let res = evaluate(&problem, cfg, v, g, k);
        let mut e = json!({
            "index": k + 1,
            "family": problem.family.name(),
            "variant": v.letter().to_string(),
            "components": g,
            "method": match cfg.method { Method::Em => "em", Method::Mcmc => "mcmc" },
        });
        match &res {
            Ok(r) => {
                let extra = json!({
                    "status": "ok",
                    "loglik": r.loglik,
                    "bic": r.bic,
                    "aicm": r.aicm,
                    "log_marglik": r.log_marglik,
                    "log_marglik_se": r.log_marglik_se,
                    "log_marglik_ess": r.ess,
                    "exact_log_marglik": r.exact_log_marglik,
                    "notes": r.notes,
                });
                merge(&mut e, extra);
            }
            Err(err) => {
                log::warn!("candidate {} ({v}, G={g}) failed: {err}", k + 1);
                merge(&mut e, json!({"status": "failed", "error": err.to_string()}));
            }
        }
        entries.push(e);
        rows.push(res.ok());
    }
    let mut winners = serde_json::Map::new();
    let mut lines = vec![format!("{:<4} {:<8} {:>3} {:>16} {:>16} {:>16}", "#", "variant", "G", "bic", "aicm", "log-marglik")];
    for (k, r) in rows.iter().enumerate() {
        let (v, g) = candidates[k];
        let f = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        lines.push(match r {
            Some(r) => format!("{:<4} {:<8} {:>3} {:>16} {:>16} {:>16}", k + 1, v.letter(), g, f(r.bic), f(r.aicm), f(r.log_marglik)),
            None => format!("{:<4} {:<8} {:>3} failed", k + 1, v.letter(), g),
        });
    }
    for c in &crits {
        let values: Vec<Option<f64>> = rows
            .iter()
            .map(|r| {
                r.as_ref().and_then(|r| match c {
                    Criterion::Bic => r.bic,
                    Criterion::Aicm => r.aicm,
                    Criterion::LogMarglik => r.log_marglik,
                })
            })
            .collect();
        let w = winner(&values, *c).map(|k| {
            lines.push(format!("{} winner: candidate {}", c.name(), k + 1));
            json!({"index": k + 1, "variant": candidates[k].0.letter().to_string(), "components": candidates[k].1})
        });
        winners.insert(c.name().to_string(), w.unwrap_or(Value::Null));
    }
    let doc = versioned(json!({
        "command": "select",
        "criteria": crits.iter().map(|c| json!({"name": c.name(), "smaller_is_better": c.smaller_is_better()})).collect::<Vec<_>>(),
        "candidates": entries,
        "winners": winners,
    }));
    ensure_dir(&cfg.out)?;
    write_json(&cfg.out.join("comparison.json"), &doc)?;
    Ok(lines.join("\n"))
}

fn merge(base: &mut Value, extra: Value) {
    if let (Value::Object(a), Value::Object(b)) = (base, extra) {
        a.extend(b);
    }
}
