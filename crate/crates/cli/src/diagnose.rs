use nalgebra::DMatrix;
use serde_json::{json, Value};

use moe::experts::Experts;
use moe::identifiability::{
    binomial_alias_set, diagnose_chain, extended_coverage_at_labels, regression_alias_solutions,
    regression_coverage_check, simple_me_identifiable, BinomialTwoMixture, DiagnoseOptions, Functional,
    IdentifiabilityReport, SimpleMeOptions, Verdict,
};
use moe::{Family, MeModel, Outcomes, Variant, Weights};

use crate::config::{Problem, RunConfig};
use crate::error::{CliError, CliResult};
use crate::fit::{draw_rows, relabeled_models, run_em, run_mcmc, single_model};
use crate::output::{ensure_dir, versioned, write_csv, write_json};

fn parse_functional(s: &str) -> CliResult<Functional> {
    let bad = || CliError::input(format!("unknown functional `{s}` (auto, coef:K or feature:K)"));
    match s.split_once(':') {
        None if s == "auto" => Ok(Functional::Auto),
        Some(("coef", k)) => Ok(Functional::Coefficient(k.parse().map_err(|_| bad())?)),
        Some(("feature", k)) => Ok(Functional::Feature(k.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

fn empty_report(verdict: Verdict, rule: String) -> IdentifiabilityReport {
    IdentifiabilityReport {
        verdict,
        rule,
        aliases: Vec::new(),
        mode_census: None,
        intra_switch_flag: false,
        switch_evidence: Vec::new(),
        notes: Vec::new(),
    }
}

fn distinct_rows(design: &DMatrix<f64>) -> DMatrix<f64> {
    let mut rows: Vec<Vec<f64>> = design.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    rows.dedup();
    DMatrix::from_fn(rows.len(), design.ncols(), |i, j| rows[i][j])
}

/// Counting and coverage rules, plus exact alias sets when parameters are at hand.
fn condition_checks(
    problem: &Problem,
    variant: Variant,
    g: usize,
    labels: Option<&[usize]>,
    reference: Option<&MeModel>,
) -> CliResult<(IdentifiabilityReport, Vec<Value>)> {
    let design = problem.data.design();
    let mut regression_aliases = Vec::new();
    let report = match problem.family {
        Family::GaussianRegression => {
            let cov = regression_coverage_check(design, g);
            let verdict = match cov.covered {
                Some(true) => Verdict::Identified,
                Some(false) => Verdict::NotIdentified,
                None => Verdict::Unknown,
            };
            let mut r = empty_report(verdict, format!("coverage condition: {}", cov.note));
            if let Some(ext) = labels.and_then(|l| extended_coverage_at_labels(design, l, g)) {
                r.notes.push(format!(
                    "extended coverage at MAP labels (heuristic, sufficient only): {}",
                    if ext.iter().all(|&c| c) { "satisfied" } else { "not satisfied" }
                ));
            }
            if let Some(Experts::Regression(v)) = reference.map(|m| m.experts()) {
                if design.ncols() == 2 {
                    let betas: Vec<_> = v.iter().map(|e| e.beta().clone()).collect();
                    for a in regression_alias_solutions(&distinct_rows(design), &betas)? {
                        regression_aliases.push(json!({
                            "permutation": a.sigma.as_slice().iter().map(|s| s + 1).collect::<Vec<_>>(),
                            "betas": a.betas.iter().map(|b| b.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
                            "max_mismatch": a.max_mismatch,
                            "consistent": a.consistent,
                        }));
                    }
                }
            }
            r
        }
        family if variant.experts_use_covariates() => empty_report(
            Verdict::Unknown,
            format!("no identifiability result for {} experts with covariates", family.name()),
        ),
        family => {
            let trials = match problem.data.outcomes() {
                Outcomes::Binomial { trials, .. } => Some(*trials),
                _ => None,
            };
            let gating_design = if variant.gating_uses_covariates() {
                design.clone()
            } else {
                design.columns(0, 1).into_owned()
            };
            let opts = SimpleMeOptions { trials, ..SimpleMeOptions::default() };
            let mut r = simple_me_identifiable(family, &gating_design, g, labels, opts)?;
            if let (Some(t), Some(m), 2) = (trials, reference, g) {
                if let (Weights::Fixed(eta), Experts::Binomial(v)) = (m.weights(), m.experts()) {
                    let theta = BinomialTwoMixture { eta: eta[0], pi1: v[0].prob(), pi2: v[1].prob() };
                    r.aliases = binomial_alias_set(theta, t, 25)?;
                }
            }
            r
        }
    };
    Ok((report, regression_aliases))
}

fn report_json(report: &IdentifiabilityReport) -> Value {
    let aliases: Vec<Value> = report
        .aliases
        .iter()
        .map(|a| {
            json!({
                "parameters": a.parameters.iter().map(|(n, v)| json!({"name": n, "value": v})).collect::<Vec<_>>(),
                "max_discrepancy": a.max_discrepancy,
            })
        })
        .collect();
    let census = report.mode_census.as_ref().map(|c| {
        json!({
            "count": c.count,
            "centers": c.centers,
            "occupancy": c.occupancy,
            "candidates": c.candidates.iter().map(|(k, s)| json!({"modes": k, "silhouette": s})).collect::<Vec<_>>(),
            "elongation": c.elongation,
        })
    });
    let switches: Vec<Value> = report
        .switch_evidence
        .iter()
        .map(|s| {
            json!({
                "component": s.component + 1,
                "ashman_d": s.ashman_d,
                "means": [s.means.0, s.means.1],
                "smaller_weight": s.smaller_weight,
                "bimodal": s.bimodal,
            })
        })
        .collect();
    json!({
        "verdict": report.verdict.name(),
        "rule": report.rule,
        "aliases": aliases,
        "mode_census": census,
        "intra_switch_flag": report.intra_switch_flag,
        "switch_evidence": switches,
        "notes": report.notes,
    })
}

/// Condition checks, then (unless `--conditions-only`) an MCMC run with the
/// mode census and switching diagnostics. Writes `report.json` and, with a
/// chain, `raw_draws.csv` and `relabeled_draws.csv`.
pub fn cmd_diagnose(cfg: &RunConfig) -> CliResult<String> {
    let problem = cfg.problem()?;
    let (variant, g) = single_model(&problem)?;
    let functional = parse_functional(&cfg.functional)?;
    ensure_dir(&cfg.out)?;
    let mut chain_info = Value::Null;
    let (report, regression_aliases) = if cfg.conditions_only {
        condition_checks(&problem, variant, g, None, problem.truth.as_ref())?
    } else {
        let em = run_em(&problem, cfg, variant, g);
        if let Err(e) = &em {
            log::warn!("EM fit for MAP labels failed: {e}");
        }
        let em = em.ok();
        let reference = problem.truth.as_ref().or(em.as_ref().map(|f| &f.model));
        let (conditions, aliases) =
            condition_checks(&problem, variant, g, em.as_ref().map(|f| f.map_assignment.as_slice()), reference)?;
        let (chains, _) = run_mcmc(&problem, cfg, variant, g, false)?;
        let per_chain: Vec<Vec<MeModel>> = chains.iter().map(|c| c.models()).collect();
        let pooled: Vec<MeModel> = per_chain.iter().flatten().cloned().collect();
        let seed = chains[0].config.seed;
        let opts = DiagnoseOptions { functional, seed, ..DiagnoseOptions::default() };
        let chain_report = diagnose_chain(&pooled, &opts)?;
        let (relabeled, flagged) = relabeled_models(&pooled, seed)?;
        let (header, rows) = draw_rows(&per_chain, None);
        write_csv(&cfg.out.join("raw_draws.csv"), &header, &rows)?;
        let mut split = Vec::new();
        let mut start = 0;
        for c in &per_chain {
            split.push(relabeled[start..start + c.len()].to_vec());
            start += c.len();
        }
        let (header, rows) = draw_rows(&split, None);
        write_csv(&cfg.out.join("relabeled_draws.csv"), &header, &rows)?;
        chain_info = json!({
            "chains": chains.len(),
            "draws": pooled.len(),
            "relabeling_flagged_fraction": flagged,
        });
        (conditions.merge(chain_report), aliases)
    };
    let mut doc = report_json(&report);
    if let Value::Object(m) = &mut doc {
        m.insert("command".into(), json!("diagnose"));
        m.insert("family".into(), json!(problem.family.name()));
        m.insert("variant".into(), json!(variant.letter().to_string()));
        m.insert("components".into(), json!(g));
        m.insert("regression_aliases".into(), Value::from(regression_aliases));
        m.insert("chain".into(), chain_info);
    }
    write_json(&cfg.out.join("report.json"), &versioned(doc))?;
    let modes = report.mode_census.as_ref().map_or(String::new(), |c| format!(", {} modes", c.count));
    Ok(format!("verdict: {}{modes}", report.verdict.name()))
}
