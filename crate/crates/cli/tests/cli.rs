use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn moe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moe"))
        .args(args)
        .env("MOE_LOG", "error")
        .output()
        .expect("run moe")
}

fn ok(args: &[&str]) -> String {
    let out = moe(args);
    assert!(
        out.status.success(),
        "moe {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn design1_simulation_is_balanced() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--preset", "sec5.2-design1", "--n", "100", "--seed", "3", "--out", s(dir.path())]);
    let (header, rows) = csv_rows(&dir.path().join("data.csv"));
    assert_eq!(header, vec!["y", "d"]);
    assert_eq!(rows.len(), 100);
    let ones = rows.iter().filter(|r| r[1] == "1").count();
    assert_eq!(ones, 50);
    let (th, tr) = csv_rows(&dir.path().join("truth.csv"));
    assert_eq!(th, vec!["row", "z"]);
    assert!(tr.iter().all(|r| r[1] == "1" || r[1] == "2"));
}

#[test]
fn binomial_simulation_records_trials() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--preset", "sec5.1-binomial-T5", "--n", "100", "--seed", "3", "--out", s(dir.path())]);
    let (header, rows) = csv_rows(&dir.path().join("data.csv"));
    assert_eq!(header, vec!["y"]);
    assert!(rows.iter().all(|r| r[0].parse::<u32>().unwrap() <= 5));
    let p = json(&dir.path().join("params.json"));
    assert_eq!(p["schema_version"], 1);
    for e in p["experts"].as_array().unwrap() {
        assert_eq!(e["trials"], 5);
    }
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&["simulate", "--preset", "gaussian-gating", "--seed", "7", "--out", s(d.path())]);
    }
    for f in ["data.csv", "truth.csv", "params.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    for d in [&a, &b] {
        ok(&["fit", "--preset", "binomial-t5", "--method", "mcmc", "--seed", "7", "--iters", "600", "--burnin", "200", "--out", s(d.path())]);
    }
    for f in ["draws.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

fn key_shape(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), key_shape(v))).collect()),
        Value::Array(a) => Value::Array(a.iter().take(1).map(key_shape).collect()),
        Value::Number(_) => Value::from("number"),
        other => other.clone(),
    }
}

#[test]
fn fitted_params_match_the_simulation_schema() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let fit = dir.path().join("fit");
    ok(&["simulate", "--preset", "regression-design2", "--seed", "2", "--out", s(&sim)]);
    ok(&[
        "fit", "--data", s(&sim.join("data.csv")), "--family", "regression", "--variant", "b", "--covariates", "d",
        "--components", "2", "--restarts", "3", "--seed", "1", "--out", s(&fit),
    ]);
    let truth = json(&sim.join("params.json"));
    let est = json(&fit.join("params.json"));
    assert_eq!(key_shape(&truth), key_shape(&est));
    let report = json(&fit.join("fit.json"));
    assert_eq!(report["params"], est);
    assert_eq!(report["map_labels"].as_array().unwrap().len(), 100);
    assert!(report["map_labels"].as_array().unwrap().iter().all(|z| z == 1 || z == 2));
    assert_eq!(report["crosstab"]["covariate"], "d");
    assert_eq!(report["crosstab"]["levels"].as_array().unwrap().len(), 3);
    let trace = report["loglik_trace"].as_array().unwrap();
    for w in trace.windows(2) {
        assert!(w[1].as_f64().unwrap() >= w[0].as_f64().unwrap() - 1e-8);
    }
    assert!(report["std_errors"].as_array().unwrap().iter().any(|e| e["name"] == "beta[1][1]"));
}

/// Fitted γ₂₁ for the gating preset, with components matched to the truth by their means.
fn gating_slope(fit: &Value) -> f64 {
    let params = &fit["params"];
    let g = params["gating"][1][1].as_f64().unwrap();
    let mean = |k: usize| -> Vec<f64> {
        params["experts"][k]["mean"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
    };
    let d = |m: &[f64], t: &[f64]| (m[0] - t[0]).powi(2) + (m[1] - t[1]).powi(2);
    let (m1, m2) = (mean(0), mean(1));
    let (t1, t2) = ([0.0, 0.0], [3.0, 2.5]);
    if d(&m1, &t1) + d(&m2, &t2) <= d(&m1, &t2) + d(&m2, &t1) {
        g
    } else {
        // swapping the labels of a two-component gate negates γ₂
        -g
    }
}

#[test]
fn em_recovers_the_gating_sign() {
    let dir = tempfile::tempdir().unwrap();
    let mut positive = 0;
    for seed in 0..100u64 {
        let out = dir.path().join(format!("r{seed}"));
        ok(&["fit", "--preset", "sec2.2-gaussian", "--seed", &seed.to_string(), "--out", s(&out)]);
        let fit = json(&out.join("fit.json"));
        assert_eq!(fit["crosstab"]["covariate"], "x");
        if gating_slope(&fit) > 0.0 {
            positive += 1;
        }
    }
    assert!(positive >= 95, "positive gating slope in {positive}/100 fits");
}

#[test]
fn mcmc_summary_reports_hpd_intervals() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "fit", "--preset", "gaussian-gating", "--method", "mcmc", "--seed", "4", "--iters", "1500", "--burnin", "500",
        "--chains", "2", "--out", s(dir.path()),
    ]);
    let summary = json(&dir.path().join("summary.json"));
    let params = summary["parameters"].as_array().unwrap();
    let gamma = params.iter().find(|p| p["name"] == "gamma[2,1]").expect("gating slope summarized");
    let (lo, hi) = (gamma["hpd95"][0].as_f64().unwrap(), gamma["hpd95"][1].as_f64().unwrap());
    let mean = gamma["mean"].as_f64().unwrap();
    assert!(lo < mean && mean < hi);
    assert_eq!(summary["psrf"].as_array().unwrap().len(), params.len());
    let (header, rows) = csv_rows(&dir.path().join("draws.csv"));
    assert_eq!(&header[..3], &["chain", "draw", "loglik"]);
    assert_eq!(rows.len(), 2000);
}

#[test]
fn malformed_rows_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "y,d\n1.5,0\n2.5,1\nnot-a-number,1\n").unwrap();
    let out = moe(&["fit", "--data", s(&bad), "--family", "regression", "--covariates", "d", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3"), "{err}");
    std::fs::write(&bad, "y,d\n1.5,0\n2.5\n").unwrap();
    let out = moe(&["fit", "--data", s(&bad), "--family", "regression", "--covariates", "d", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}

#[test]
fn input_and_numerical_failures_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(moe(&["simulate", "--preset", "no-such-setup", "--seed", "1"]).status.code(), Some(2));
    assert_eq!(moe(&["simulate", "--preset", "binomial-t2"]).status.code(), Some(2));
    assert_eq!(
        moe(&["fit", "--preset", "binomial-t2", "--method", "mcmc", "--seed", "1", "--iters", "10", "--burnin", "10"])
            .status
            .code(),
        Some(2)
    );
    let degenerate = dir.path().join("deg.csv");
    std::fs::write(&degenerate, "y1,y2\n1,1\n1,1\n1,1\n1,1\n2,2\n").unwrap();
    let out = moe(&["fit", "--data", s(&degenerate), "--family", "gaussian", "--components", "2", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bic_prefers_two_separated_components() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "select", "--preset", "gaussian-gating", "--variant", "a", "--components", "1,2", "--seed", "5", "--restarts",
        "3", "--out", s(dir.path()),
    ]);
    let c = json(&dir.path().join("comparison.json"));
    assert_eq!(c["winners"]["bic"]["components"], 2);
    let cands = c["candidates"].as_array().unwrap();
    assert!(cands[1]["bic"].as_f64().unwrap() < cands[0]["bic"].as_f64().unwrap());
}

#[test]
fn markov_marginal_likelihoods_agree_and_aicm_winner_is_the_largest() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("markov.json");
    std::fs::write(
        &params,
        r#"{"schema_version":1,"family":"markov","variant":"a","components":1,"covariates":[],
            "weights":[1.0],"gating":null,
            "experts":[{"history":"prev","xi":[[0.7,0.2,0.1],[0.1,0.8,0.1],[0.3,0.3,0.4]]}]}"#,
    )
    .unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--params", s(&params), "--n", "50", "--transitions", "4", "--seed", "5", "--out", s(&sim)]);
    let (header, _) = csv_rows(&sim.join("data.csv"));
    assert_eq!(header, vec!["t0", "t1", "t2", "t3", "t4"]);
    let sel = dir.path().join("sel");
    ok(&[
        "select", "--data", s(&sim.join("data.csv")), "--family", "markov", "--components", "1,2", "--method", "mcmc",
        "--seed", "3", "--iters", "1200", "--burnin", "400", "--is-draws", "1000", "--out", s(&sel),
    ]);
    let c = json(&sel.join("comparison.json"));
    let cands = c["candidates"].as_array().unwrap();
    let g1 = &cands[0];
    let exact = g1["exact_log_marglik"].as_f64().unwrap();
    let is = g1["log_marglik"].as_f64().unwrap();
    let se = g1["log_marglik_se"].as_f64().unwrap();
    assert!((exact - is).abs() <= 3.0 * se + 1e-9, "exact {exact}, IS {is} ± {se}");
    let aicm: Vec<f64> = cands.iter().map(|x| x["aicm"].as_f64().unwrap()).collect();
    let best = if aicm[0] >= aicm[1] { 1 } else { 2 };
    assert_eq!(c["winners"]["aicm"]["index"], best);
}

#[test]
fn condition_only_diagnosis() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["diagnose", "--preset", "sec5.2-design1", "--seed", "1", "--conditions-only", "--out", s(dir.path())]);
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["verdict"], "not-identified");
    assert!(r["mode_census"].is_null());
    let alias = &r["regression_aliases"][0];
    assert_eq!(alias["consistent"], true);
    assert_eq!(alias["betas"], serde_json::json!([[2.0, -3.0], [1.0, 3.0]]));

    ok(&["diagnose", "--preset", "sec5.2-design2", "--seed", "1", "--conditions-only", "--out", s(dir.path())]);
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["verdict"], "identified");
    assert_eq!(r["regression_aliases"][0]["consistent"], false);

    ok(&["diagnose", "--preset", "binomial-t2", "--seed", "1", "--conditions-only", "--out", s(dir.path())]);
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["verdict"], "not-identified");
    assert!(!r["aliases"].as_array().unwrap().is_empty());

    ok(&["diagnose", "--preset", "binomial-t5", "--seed", "1", "--conditions-only", "--out", s(dir.path())]);
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["verdict"], "identified");
    assert!(r["aliases"].as_array().unwrap().is_empty());
}

#[test]
fn binomial_t5_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["diagnose", "--preset", "sec5.1-binomial-T5", "--seed", "1", "--out", s(dir.path())]);
    assert!(stdout.contains("identified"));
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["verdict"], "identified");
    assert_eq!(r["mode_census"]["count"], 2);
    let (raw_h, raw) = csv_rows(&dir.path().join("raw_draws.csv"));
    let (rel_h, rel) = csv_rows(&dir.path().join("relabeled_draws.csv"));
    assert_eq!(raw_h, rel_h);
    assert!(raw_h.contains(&"pi[1]".to_string()) && raw_h.contains(&"pi[2]".to_string()));
    assert_eq!(raw.len(), 10_000);
    assert_eq!(rel.len(), 10_000);
}

#[test]
fn design1_end_to_end_reports_the_alias() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["diagnose", "--preset", "sec5.2-design1", "--seed", "1", "--out", s(dir.path())]);
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["verdict"], "not-identified");
    assert_eq!(r["regression_aliases"][0]["betas"], serde_json::json!([[2.0, -3.0], [1.0, 3.0]]));
    assert!(r["mode_census"]["count"].as_u64().unwrap() >= 2);
}
