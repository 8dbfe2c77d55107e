//! Identifiability checks: the binomial counting rule and its alias sets,
//! regression coverage and cross-labeled solutions, simple mixture-of-experts
//! conditions, and diagnostics on posterior draws.
//!
//! Verdicts are condition checks, not proofs.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::cluster::{kmeans, silhouette};
use crate::em::{ecm_fit, EmConfig};
use crate::error::{MoeError, Result};
use crate::experts::{binomial_coefficient, binomial_mixture_pmf_vec, Experts};
use crate::lp::complete_separation;
use crate::mcmc::relabel::component_features;
use crate::mcmc::resolve_label_switching;
use crate::model::{Dataset, Family, MeModel, Outcomes, Permutation, Variant, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Identified,
    NotIdentified,
    Unknown,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Identified => "identified",
            Verdict::NotIdentified => "not-identified",
            Verdict::Unknown => "unknown",
        }
    }
}

/// An alternative parameter value with the same observable distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Alias {
    pub parameters: Vec<(String, f64)>,
    /// Largest pmf or mean discrepancy against the original parameters.
    pub max_discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeCensus {
    pub count: usize,
    pub centers: Vec<Vec<f64>>,
    pub occupancy: Vec<f64>,
    /// (k, mean silhouette) for every candidate k.
    pub candidates: Vec<(usize, f64)>,
    /// sqrt(λ_max / λ_min) of the within-mode covariance, per mode.
    pub elongation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchEvidence {
    pub component: usize,
    /// Ashman's D of a two-component normal fit to the relabeled draws.
    pub ashman_d: f64,
    pub means: (f64, f64),
    pub smaller_weight: f64,
    pub bimodal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiabilityReport {
    pub verdict: Verdict,
    /// Which conditions fired.
    pub rule: String,
    pub aliases: Vec<Alias>,
    pub mode_census: Option<ModeCensus>,
    pub intra_switch_flag: bool,
    pub switch_evidence: Vec<SwitchEvidence>,
    pub notes: Vec<String>,
}

impl IdentifiabilityReport {
    fn verdict_only(verdict: Verdict, rule: impl Into<String>) -> Self {
        IdentifiabilityReport {
            verdict,
            rule: rule.into(),
            aliases: Vec::new(),
            mode_census: None,
            intra_switch_flag: false,
            switch_evidence: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Combines two reports; a failed condition in either wins, then a positive verdict.
    pub fn merge(mut self, other: IdentifiabilityReport) -> IdentifiabilityReport {
        self.verdict = match (self.verdict, other.verdict) {
            (Verdict::NotIdentified, _) | (_, Verdict::NotIdentified) => Verdict::NotIdentified,
            (Verdict::Identified, _) | (_, Verdict::Identified) => Verdict::Identified,
            _ => Verdict::Unknown,
        };
        if !other.rule.is_empty() {
            self.rule = if self.rule.is_empty() { other.rule } else { format!("{}; {}", self.rule, other.rule) };
        }
        self.aliases.extend(other.aliases);
        self.mode_census = self.mode_census.or(other.mode_census);
        self.intra_switch_flag |= other.intra_switch_flag;
        self.switch_evidence.extend(other.switch_evidence);
        self.notes.extend(other.notes);
        self
    }
}

/// Counting condition 2G − 1 ≤ T; the margin is T − (2G − 1).
pub fn binomial_identifiable(components: usize, trials: u32) -> (bool, i64) {
    let margin = trials as i64 - (2 * components as i64 - 1);
    (margin >= 0, margin)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialTwoMixture {
    /// Weight of the first component.
    pub eta: f64,
    pub pi1: f64,
    pub pi2: f64,
}

impl BinomialTwoMixture {
    fn canonical(self) -> BinomialTwoMixture {
        if self.pi1 <= self.pi2 {
            self
        } else {
            BinomialTwoMixture { eta: 1.0 - self.eta, pi1: self.pi2, pi2: self.pi1 }
        }
    }

    fn distance(&self, other: &BinomialTwoMixture) -> f64 {
        (self.eta - other.eta).abs().max((self.pi1 - other.pi1).abs()).max((self.pi2 - other.pi2).abs())
    }

    pub fn pmf(&self, trials: u32) -> Result<Vec<f64>> {
        binomial_mixture_pmf_vec(trials, &[self.eta, 1.0 - self.eta], &[self.pi1, self.pi2])
    }
}

fn pmf_residual_and_jacobian(theta: &Vector3<f64>, trials: u32, target: &[f64]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let (eta, a, b) = (theta[0], theta[1], theta[2]);
    let t = trials as i32;
    let term = |p: f64, y: i32| p.powi(y) * (1.0 - p).powi(t - y);
    let dterm = |p: f64, y: i32| {
        let left = if y > 0 { y as f64 * p.powi(y - 1) * (1.0 - p).powi(t - y) } else { 0.0 };
        let right = if y < t { (t - y) as f64 * p.powi(y) * (1.0 - p).powi(t - y - 1) } else { 0.0 };
        left - right
    };
    let mut r = Vec::with_capacity(target.len());
    let mut jac = Vec::with_capacity(target.len());
    for y in 0..=t {
        let c = binomial_coefficient(trials, y as u32);
        r.push(c * (eta * term(a, y) + (1.0 - eta) * term(b, y)) - target[y as usize]);
        jac.push([c * (term(a, y) - term(b, y)), c * eta * dterm(a, y), c * (1.0 - eta) * dterm(b, y)]);
    }
    (r, jac)
}

/// Damped Gauss-Newton on the pmf equations from one start, inside the open unit cube.
fn solve_pmf_equations(start: Vector3<f64>, trials: u32, target: &[f64]) -> Option<BinomialTwoMixture> {
    let clamp = |v: Vector3<f64>| v.map(|x| x.clamp(1e-9, 1.0 - 1e-9));
    let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut theta = clamp(start);
    let (mut r, mut jac) = pmf_residual_and_jacobian(&theta, trials, target);
    let mut lambda = 1e-3;
    for _ in 0..300 {
        if r.iter().all(|x| x.abs() < 1e-15) {
            break;
        }
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (ri, ji) in r.iter().zip(&jac) {
            let j = Vector3::new(ji[0], ji[1], ji[2]);
            jtj += j * j.transpose();
            jtr += j * *ri;
        }
        let mut damped = jtj;
        for k in 0..3 {
            damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
        }
        let Some(step) = damped.lu().solve(&(-jtr)) else { return None };
        let trial = clamp(theta + step);
        let (r2, jac2) = pmf_residual_and_jacobian(&trial, trials, target);
        if norm(&r2) < norm(&r) {
            theta = trial;
            r = r2;
            jac = jac2;
            lambda = (lambda / 3.0).max(1e-12);
        } else {
            lambda *= 4.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    let max_err = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (max_err < 1e-12).then(|| BinomialTwoMixture { eta: theta[0], pi1: theta[1], pi2: theta[2] })
}

/// Parameter values of a two-component binomial mixture that reproduce its pmf
/// without being a relabeling of it.
///
/// For T = 2 the solution set is the curve through θ fixed by the first two
/// moments and is sampled at `n_points` values of π₁*. For other T the pmf
/// equations are solved from a grid of starts. An empty result means no
/// non-trivial solution was found.
pub fn binomial_alias_set(theta: BinomialTwoMixture, trials: u32, n_points: usize) -> Result<Vec<Alias>> {
    if !(theta.eta > 0.0 && theta.eta < 1.0) {
        return Err(MoeError::InvalidParameter("weight must lie in (0, 1)".into()));
    }
    if [theta.pi1, theta.pi2].iter().any(|p| !(*p > 0.0 && *p < 1.0)) || theta.pi1 == theta.pi2 {
        return Err(MoeError::InvalidParameter("need two distinct probabilities in (0, 1)".into()));
    }
    let target = theta.pmf(trials)?;
    let truth = theta.canonical();
    let mut found: Vec<BinomialTwoMixture> = Vec::new();
    let push = |cand: BinomialTwoMixture, found: &mut Vec<BinomialTwoMixture>| {
        let c = cand.canonical();
        if c.distance(&truth) > 1e-6 && found.iter().all(|f| f.distance(&c) > 1e-6) {
            found.push(c);
        }
    };
    if trials == 2 {
        let m1 = theta.eta * theta.pi1 + (1.0 - theta.eta) * theta.pi2;
        let m2 = theta.eta * theta.pi1.powi(2) + (1.0 - theta.eta) * theta.pi2.powi(2);
        for k in 0..n_points {
            let s = (k as f64 + 0.5) / n_points as f64;
            if (m1 - s).abs() < 1e-12 {
                continue;
            }
            let p2 = (m2 - s * m1) / (m1 - s);
            if !(p2 > 0.0 && p2 < 1.0) || (s - p2).abs() < 1e-12 {
                continue;
            }
            let eta = (m1 - p2) / (s - p2);
            if eta > 0.0 && eta < 1.0 {
                push(BinomialTwoMixture { eta, pi1: s, pi2: p2 }, &mut found);
            }
        }
    } else {
        let grid: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
        for &e in &grid {
            for (i, &a) in grid.iter().enumerate() {
                for &b in &grid[i + 1..] {
                    if let Some(sol) = solve_pmf_equations(Vector3::new(e, a, b), trials, &target) {
                        if (sol.pi1 - sol.pi2).abs() > 1e-6 {
                            push(sol, &mut found);
                        }
                    }
                }
            }
        }
    }
    found
        .into_iter()
        .map(|c| {
            let pmf = c.pmf(trials)?;
            let err = pmf.iter().zip(&target).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            Ok(Alias {
                parameters: vec![("eta1".into(), c.eta), ("pi1".into(), c.pi1), ("pi2".into(), c.pi2)],
                max_discrepancy: err,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCheck {
    /// `None` when the condition was not evaluated (more than one covariate).
    pub covered: Option<bool>,
    pub distinct_points: Option<usize>,
    pub note: String,
}

fn distinct_values(xs: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    v.len()
}

/// Coverage condition for a mixture of G regressions on a design with an
/// intercept column: with one covariate, more distinct covariate values than
/// components.
pub fn regression_coverage_check(design: &DMatrix<f64>, components: usize) -> CoverageCheck {
    let q = design.ncols().saturating_sub(1);
    if q == 0 {
        return CoverageCheck {
            covered: Some(true),
            distinct_points: Some(1),
            note: "no covariate; the model is a univariate normal mixture, generically identified".into(),
        };
    }
    if q > 1 {
        return CoverageCheck {
            covered: None,
            distinct_points: None,
            note: format!(
                "{q} covariates: requires more than {components} distinct hyperplanes to cover the design; not evaluated"
            ),
        };
    }
    let p = distinct_values(design.column(1).iter().copied());
    let mut note = format!("{p} distinct design points for {components} components");
    if p <= components && components == 1 {
        note.push_str("; a single regression is identified by full-rank XᵀX alone");
    }
    CoverageCheck {
        covered: Some(p > components),
        distinct_points: Some(p),
        note,
    }
}

/// The extended coverage condition evaluated within each cluster of a hard
/// assignment (one covariate only). Heuristic: the assignment is an estimate.
pub fn extended_coverage_at_labels(design: &DMatrix<f64>, labels: &[usize], components: usize) -> Option<Vec<bool>> {
    if design.ncols() != 2 || labels.len() != design.nrows() {
        return None;
    }
    Some(
        (0..components)
            .map(|g| {
                let xs = labels.iter().enumerate().filter(|(_, &z)| z == g).map(|(i, _)| design[(i, 1)]);
                distinct_values(xs) > components
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionAlias {
    /// Labelling of components at the second design point.
    pub sigma: Permutation,
    pub betas: Vec<DVector<f64>>,
    /// Largest mismatch between the candidate's and the original's sorted
    /// component means over all design points.
    pub max_mismatch: f64,
    pub consistent: bool,
}

/// β*_g = X₁₂⁻¹ (x₁β_g, x₂β_{σ(g)})ᵀ from the first two of `points` (rows (1, x)).
pub fn cross_labeled_solution(points: &DMatrix<f64>, betas: &[DVector<f64>], sigma: &Permutation) -> Result<Vec<DVector<f64>>> {
    if points.ncols() != 2 || points.nrows() < 2 {
        return Err(MoeError::Unsupported("cross-labeled solutions need at least two points with one covariate".into()));
    }
    if sigma.len() != betas.len() || betas.iter().any(|b| b.len() != 2) {
        return Err(MoeError::Dimension("one permutation entry and two coefficients per component".into()));
    }
    let x12 = points.rows(0, 2).into_owned();
    let lu = x12.clone().lu();
    if x12.determinant().abs() < 1e-12 {
        return Err(MoeError::Numerical("the first two design points are not distinct".into()));
    }
    let mean = |row: usize, b: &DVector<f64>| points[(row, 0)] * b[0] + points[(row, 1)] * b[1];
    (0..betas.len())
        .map(|g| {
            let rhs = DVector::from_vec(vec![mean(0, &betas[g]), mean(1, &betas[sigma.map(g)])]);
            lu.solve(&rhs).ok_or_else(|| MoeError::Numerical("singular design".into()))
        })
        .collect()
}

/// Every non-identity cross-labeling, checked for consistency at all design points.
pub fn regression_alias_solutions(points: &DMatrix<f64>, betas: &[DVector<f64>]) -> Result<Vec<RegressionAlias>> {
    let scale = 1.0 + betas.iter().flat_map(|b| b.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = Vec::new();
    for sigma in Permutation::all(betas.len()).into_iter().filter(|s| !s.is_identity()) {
        let cand = cross_labeled_solution(points, betas, &sigma)?;
        let mut mismatch = 0.0f64;
        for r in 0..points.nrows() {
            let sorted = |bs: &[DVector<f64>]| {
                let mut m: Vec<f64> = bs.iter().map(|b| points[(r, 0)] * b[0] + points[(r, 1)] * b[1]).collect();
                m.sort_by(|a, b| a.total_cmp(b));
                m
            };
            for (a, b) in sorted(&cand).iter().zip(sorted(betas)) {
                mismatch = mismatch.max((a - b).abs());
            }
        }
        out.push(RegressionAlias {
            sigma,
            betas: cand,
            max_mismatch: mismatch,
            consistent: mismatch <= 1e-9 * scale,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimpleMeOptions {
    /// Trials for the binomial family.
    pub trials: Option<u32>,
    /// Largest acceptable condition number of XᵀX.
    pub max_condition: f64,
}

impl Default for SimpleMeOptions {
    fn default() -> Self {
        SimpleMeOptions { trials: None, max_condition: 1e12 }
    }
}

/// Conditions for a simple mixture of experts (covariates in the gating only):
/// the covariate-free mixture of the family is identified, XᵀX is well
/// conditioned, and, when MAP labels are given, the labels are not completely
/// separated by the covariates.
pub fn simple_me_identifiable(
    family: Family,
    design: &DMatrix<f64>,
    components: usize,
    map_labels: Option<&[usize]>,
    opts: SimpleMeOptions,
) -> Result<IdentifiabilityReport> {
    let mut report = match family {
        Family::Gaussian => IdentifiabilityReport::verdict_only(
            Verdict::Identified,
            "Gaussian mixtures are generically identified",
        ),
        Family::Binomial => {
            let t = opts
                .trials
                .ok_or_else(|| MoeError::InvalidParameter("binomial check needs the number of trials".into()))?;
            let (ok, margin) = binomial_identifiable(components, t);
            IdentifiabilityReport::verdict_only(
                if ok { Verdict::Identified } else { Verdict::NotIdentified },
                format!("binomial counting rule 2G-1 <= T (margin {margin})"),
            )
        }
        Family::Markov | Family::PlackettLuce => IdentifiabilityReport::verdict_only(
            Verdict::Unknown,
            format!("no generic identifiability result for {} mixtures", family.name()),
        ),
        Family::GaussianRegression => {
            return Err(MoeError::Incompatible {
                family: "regression".into(),
                variant: 'c',
                reason: "regression experts use covariates; not a simple mixture of experts".into(),
            })
        }
    };
    if components > 1 {
        let xtx = design.transpose() * design;
        let sv = xtx.singular_values();
        let (mx, mn) = (sv.max(), sv.min());
        let cond = if mn > 0.0 { mx / mn } else { f64::INFINITY };
        if cond > opts.max_condition {
            report.verdict = Verdict::NotIdentified;
            report.rule.push_str(&format!("; XᵀX is rank deficient (condition number {cond:.3e})"));
        } else {
            report.rule.push_str("; XᵀX has full rank");
        }
        if let Some(labels) = map_labels {
            if complete_separation(design, labels, components)? {
                report.verdict = Verdict::NotIdentified;
                report.rule.push_str("; MAP labels are completely separated by the covariates");
            } else {
                report.rule.push_str("; no complete separation at the MAP labels");
            }
            if let Some(cov) = extended_coverage_at_labels(design, labels, components) {
                report.notes.push(format!(
                    "extended coverage at MAP labels (heuristic, sufficient only): {}",
                    if cov.iter().all(|&c| c) { "satisfied" } else { "not satisfied" }
                ));
            }
        }
    }
    report.notes.push("verdicts are condition checks, not proofs".into());
    Ok(report)
}

/// Scalar summary per component used for the mode census.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    /// Last regression coefficient (the slope with one covariate), otherwise
    /// the first component feature.
    Auto,
    /// Coefficient k of regression experts.
    Coefficient(usize),
    /// Entry k of the label-switching feature vector.
    Feature(usize),
}

/// One value per component.
pub fn functional_values(model: &MeModel, functional: Functional) -> Result<Vec<f64>> {
    let g_count = model.components();
    (0..g_count)
        .map(|g| match (functional, model.experts()) {
            (Functional::Auto, Experts::Regression(v)) => Ok(v[g].beta()[v[g].beta().len() - 1]),
            (Functional::Coefficient(k), Experts::Regression(v)) => v[g]
                .beta()
                .get(k)
                .copied()
                .ok_or_else(|| MoeError::Dimension(format!("no coefficient {k}"))),
            (Functional::Coefficient(_), _) => Err(MoeError::InvalidParameter(
                "coefficient functionals need regression experts".into(),
            )),
            (Functional::Auto, _) => Ok(component_features(model, g)[0]),
            (Functional::Feature(k), _) => component_features(model, g)
                .get(k)
                .copied()
                .ok_or_else(|| MoeError::Dimension(format!("no feature {k}"))),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnoseOptions {
    pub functional: Functional,
    /// Largest mode count tried; multiples of G! up to this value are candidates
    /// (2·G! when `None`).
    pub max_modes: Option<usize>,
    pub seed: u64,
    pub silhouette_points: usize,
    /// Mean silhouette a partition needs before a finer one is preferred.
    pub split_silhouette: f64,
    /// Ashman's D above which a relabeled component counts as bimodal.
    pub ashman_threshold: f64,
    /// Smaller weight of the two-normal fit needed for bimodality.
    pub min_weight: f64,
    /// Within-mode elongation above which a mode counts as a ridge.
    pub ridge_threshold: f64,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions {
            functional: Functional::Auto,
            max_modes: None,
            seed: 0,
            silhouette_points: 2000,
            split_silhouette: 0.7,
            ashman_threshold: 2.0,
            min_weight: 0.05,
            ridge_threshold: 3.0,
        }
    }
}

fn elongation(points: &[&Vec<f64>]) -> f64 {
    let d = points.first().map_or(0, |p| p.len());
    if points.len() < d + 2 || d < 2 {
        return 1.0;
    }
    let n = points.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n).collect();
    let cov = DMatrix::from_fn(d, d, |a, b| {
        points.iter().map(|p| (p[a] - mean[a]) * (p[b] - mean[b])).sum::<f64>() / (n - 1.0)
    });
    let ev = cov.symmetric_eigenvalues();
    let (mx, mn) = (ev.max(), ev.min());
    if mn <= 0.0 {
        f64::INFINITY
    } else {
        (mx / mn).sqrt()
    }
}

fn two_normal_fit(xs: &[f64], seed: u64) -> Option<SwitchEvidence> {
    let y = DMatrix::from_column_slice(xs.len(), 1, xs);
    let data = Dataset::without_covariates(Outcomes::Continuous(y)).ok()?;
    let mut cfg = EmConfig::new(Variant::A, Family::Gaussian, 2).with_seed(seed);
    cfg.compute_se = false;
    let fit = ecm_fit(&data, &cfg).ok()?;
    let Weights::Fixed(eta) = fit.model.weights() else { return None };
    let Experts::Gaussian(v) = fit.model.experts() else { return None };
    let (m1, m2) = (v[0].mean()[0], v[1].mean()[0]);
    let (s1, s2) = (v[0].cov()[(0, 0)], v[1].cov()[(0, 0)]);
    Some(SwitchEvidence {
        component: 0,
        ashman_d: std::f64::consts::SQRT_2 * (m1 - m2).abs() / (s1 + s2).sqrt(),
        means: (m1.min(m2), m1.max(m2)),
        smaller_weight: eta[0].min(eta[1]),
        bimodal: false,
    })
}

/// Mode census of raw draws and a bimodality check of label-resolved draws.
///
/// The scalar functional of every component gives one G-dimensional point per
/// draw. k-means is run for k ∈ {G!, 2·G!, …} and the largest k whose mean
/// silhouette reaches `split_silhouette` gives the mode count (k = G! when
/// none does, the best-scoring k; for G = 1 the single mode scores the
/// threshold itself). After
/// label switching is resolved, a component whose functional still fits two
/// well-separated normals signals intra-component label switching.
pub fn diagnose_chain(models: &[MeModel], opts: &DiagnoseOptions) -> Result<IdentifiabilityReport> {
    let Some(first) = models.first() else {
        return Err(MoeError::TooFewDraws { needed: 1, have: 0 });
    };
    let g_count = first.components();
    let fact: usize = (1..=g_count).product();
    let cap = opts.max_modes.unwrap_or(2 * fact).max(fact);
    let needed = 10 * cap.max(g_count);
    if models.len() < needed {
        return Err(MoeError::TooFewDraws { needed, have: models.len() });
    }
    let points = models
        .iter()
        .map(|m| functional_values(m, opts.functional))
        .collect::<Result<Vec<_>>>()?;

    let mut candidates: Vec<usize> = (1..).map(|m| m * fact).take_while(|&k| k <= cap).collect();
    if fact == 1 && !candidates.contains(&2) && cap >= 2 {
        candidates.push(2);
    }
    let mut scored = Vec::new();
    let mut fits = Vec::new();
    for &k in &candidates {
        let km = kmeans(&points, k, 5, opts.seed);
        let s = if k == 1 { opts.split_silhouette } else { silhouette(&points, &km.labels, k, opts.silhouette_points, opts.seed) };
        scored.push((k, s));
        fits.push(km);
    }
    // finest partition whose modes are still clearly separated, else the best-scoring one
    let pick = (0..candidates.len())
        .rev()
        .find(|&i| scored[i].1 >= opts.split_silhouette)
        .unwrap_or_else(|| (0..candidates.len()).max_by(|&a, &b| scored[a].1.total_cmp(&scored[b].1)).unwrap());
    let k = candidates[pick];
    let km = fits.swap_remove(pick);
    let n = points.len() as f64;
    let occupancy: Vec<f64> = (0..k).map(|c| km.labels.iter().filter(|&&l| l == c).count() as f64 / n).collect();
    let elong: Vec<f64> = (0..k)
        .map(|c| {
            let members: Vec<&Vec<f64>> = points.iter().zip(&km.labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            elongation(&members)
        })
        .collect();
    let census = ModeCensus {
        count: k,
        centers: km.centers.clone(),
        occupancy,
        candidates: scored,
        elongation: elong.clone(),
    };

    let mut evidence = Vec::new();
    if g_count > 1 {
        let resolved = resolve_label_switching(models, true, opts.seed)?;
        let step = (resolved.models.len() / 5000).max(1);
        for g in 0..g_count {
            let xs: Vec<f64> = resolved
                .models
                .iter()
                .step_by(step)
                .map(|m| functional_values(m, opts.functional).map(|v| v[g]))
                .collect::<Result<Vec<_>>>()?;
            if let Some(mut ev) = two_normal_fit(&xs, opts.seed) {
                ev.component = g;
                ev.bimodal = ev.ashman_d > opts.ashman_threshold && ev.smaller_weight >= opts.min_weight;
                evidence.push(ev);
            }
        }
    }
    let switching = evidence.iter().any(|e| e.bimodal);
    let ridge = elong.iter().any(|&e| e > opts.ridge_threshold);

    let mut reasons = Vec::new();
    if k > fact {
        reasons.push(format!("{k} posterior modes where {fact} are expected"));
    }
    if switching {
        reasons.push("label-resolved draws remain bimodal (intra-component label switching)".to_string());
    }
    if ridge {
        reasons.push("draws spread along a ridge instead of concentrating at a point".to_string());
    }
    let (verdict, rule) = if reasons.is_empty() {
        (Verdict::Identified, format!("{k} isolated posterior modes"))
    } else {
        (Verdict::NotIdentified, reasons.join("; "))
    };
    Ok(IdentifiabilityReport {
        verdict,
        rule,
        aliases: Vec::new(),
        mode_census: Some(census),
        intra_switch_flag: switching,
        switch_evidence: evidence,
        notes: vec!["verdicts from posterior draws are diagnostics, not proofs".into()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::{BinomialExpert, RegressionExpert};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_vec(v.to_vec())
    }

    #[test]
    fn counting_rule_verdicts() {
        assert!(!binomial_identifiable(2, 2).0);
        assert_eq!(binomial_identifiable(2, 5), (true, 2));
        for t in 1..30 {
            assert!(binomial_identifiable(1, t).0);
        }
    }

    proptest! {
        #[test]
        fn counting_rule_is_monotone_in_trials(g in 1usize..12, t in 1u32..40) {
            if binomial_identifiable(g, t).0 {
                prop_assert!(binomial_identifiable(g, t + 1).0);
            }
            // G ≤ (T + 1)/2
            prop_assert_eq!(binomial_identifiable(g, t).0, 2.0 * g as f64 <= t as f64 + 1.0);
        }
    }

    #[test]
    fn t2_aliases_reproduce_the_pmf() {
        let theta = BinomialTwoMixture { eta: 0.5, pi1: 0.3, pi2: 0.7 };
        let aliases = binomial_alias_set(theta, 2, 200).unwrap();
        assert!(aliases.len() > 10);
        for a in &aliases {
            let p: Vec<f64> = a.parameters.iter().map(|(_, v)| *v).collect();
            let pmf = binomial_mixture_pmf_vec(2, &[p[0], 1.0 - p[0]], &[p[1], p[2]]).unwrap();
            let want = theta.pmf(2).unwrap();
            for (x, y) in pmf.iter().zip(&want) {
                assert!((x - y).abs() < 1e-10);
            }
            // neither θ nor its relabeling
            assert!((p[1] - 0.3).abs() > 1e-7 || (p[2] - 0.7).abs() > 1e-7);
        }
    }

    #[test]
    fn t5_has_only_relabeled_solutions() {
        let theta = BinomialTwoMixture { eta: 0.5, pi1: 0.3, pi2: 0.7 };
        assert!(binomial_alias_set(theta, 5, 0).unwrap().is_empty());
        // the truth itself is found from the grid and filtered out
        let target = theta.pmf(5).unwrap();
        let sol = solve_pmf_equations(Vector3::new(0.4, 0.2, 0.8), 5, &target).unwrap().canonical();
        assert!(sol.distance(&theta) < 1e-6);
    }

    #[test]
    fn t1_solution_set_is_large() {
        let theta = BinomialTwoMixture { eta: 0.4, pi1: 0.2, pi2: 0.6 };
        let a = binomial_alias_set(theta, 1, 0).unwrap();
        assert!(a.len() > 5);
        assert!(a.iter().all(|x| x.max_discrepancy < 1e-10));
    }

    #[test]
    fn design_coverage() {
        let d1 = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let d2 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        assert_eq!(regression_coverage_check(&d1, 2).covered, Some(false));
        assert_eq!(regression_coverage_check(&d2, 2).covered, Some(true));
        let c = DMatrix::from_element(5, 2, 1.0);
        let single = regression_coverage_check(&c, 1);
        assert_eq!(single.covered, Some(false));
        assert!(single.note.contains("full-rank"));
        assert_eq!(regression_coverage_check(&DMatrix::from_element(5, 3, 1.0), 2).covered, None);
        assert_eq!(regression_coverage_check(&DMatrix::from_element(5, 1, 1.0), 3).covered, Some(true));
    }

    #[test]
    fn cross_labeled_regression_solution() {
        let d1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let betas = [dv(&[2.0, 2.0]), dv(&[1.0, -2.0])];
        let aliases = regression_alias_solutions(&d1, &betas).unwrap();
        assert_eq!(aliases.len(), 1);
        let a = &aliases[0];
        assert!(a.consistent);
        assert!((&a.betas[0] - dv(&[2.0, -3.0])).amax() < 1e-12);
        assert!((&a.betas[1] - dv(&[1.0, 3.0])).amax() < 1e-12);
        let same = cross_labeled_solution(&d1, &betas, &Permutation::identity(2)).unwrap();
        assert!((&same[0] - &betas[0]).amax() < 1e-12 && (&same[1] - &betas[1]).amax() < 1e-12);
    }

    #[test]
    fn third_design_point_rejects_the_cross_labeling() {
        let d2 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let betas = [dv(&[2.0, 2.0]), dv(&[1.0, -2.0])];
        let a = &regression_alias_solutions(&d2, &betas).unwrap()[0];
        assert!(!a.consistent);
        // at x = 2 the truth gives {6, −3}, the candidate {−4, 7}
        assert!((a.max_mismatch - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn alias_means_are_a_permutation_at_both_points(
            b in proptest::collection::vec(-5.0f64..5.0, 4),
            x1 in -3.0f64..3.0, dx in 0.5f64..3.0
        ) {
            let pts = DMatrix::from_row_slice(2, 2, &[1.0, x1, 1.0, x1 + dx]);
            let betas = [dv(&b[0..2]), dv(&b[2..4])];
            let a = &regression_alias_solutions(&pts, &betas).unwrap()[0];
            prop_assert!(a.max_mismatch < 1e-12 * (1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()))) * 100.0);
        }
    }

    #[test]
    fn simple_me_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dummy = DMatrix::from_fn(100, 2, |i, c| if c == 0 { 1.0 } else { (i % 2) as f64 });
        let r = simple_me_identifiable(Family::Gaussian, &dummy, 2, None, SimpleMeOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Identified);
        let opts = SimpleMeOptions { trials: Some(2), ..SimpleMeOptions::default() };
        let r = simple_me_identifiable(Family::Binomial, &dummy, 2, None, opts).unwrap();
        assert_eq!(r.verdict, Verdict::NotIdentified);
        let collinear = DMatrix::from_fn(50, 3, |i, c| if c == 0 { 1.0 } else { i as f64 });
        let r = simple_me_identifiable(Family::Gaussian, &collinear, 2, None, SimpleMeOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::NotIdentified);
        // labels equal to the dummy are separated; noisy labels are not
        let sep: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let r = simple_me_identifiable(Family::Gaussian, &dummy, 2, Some(&sep), SimpleMeOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::NotIdentified);
        let noisy: Vec<usize> = (0..100).map(|i| if rng.random::<f64>() < 0.8 { i % 2 } else { 1 - i % 2 }).collect();
        let r = simple_me_identifiable(Family::Gaussian, &dummy, 2, Some(&noisy), SimpleMeOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Identified);
        assert_eq!(
            simple_me_identifiable(Family::Markov, &dummy, 2, None, SimpleMeOptions::default()).unwrap().verdict,
            Verdict::Unknown
        );
    }

    fn planted_regression_draws(centers: &[[f64; 2]], n_each: usize, seed: u64) -> Vec<MeModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for c in centers {
            for _ in 0..n_each {
                let e = |mu: f64, icpt: f64, rng: &mut ChaCha8Rng| {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    RegressionExpert::new(dv(&[icpt, mu + 0.1 * z]), 0.1).unwrap()
                };
                let (i0, i1) = if c[0] > c[1] { (2.0, 1.0) } else { (1.0, 2.0) };
                let ex = vec![e(c[0], i0, &mut rng), e(c[1], i1, &mut rng)];
                out.push(MeModel::new(Variant::B, Weights::uniform(2), Experts::Regression(ex)).unwrap());
            }
        }
        out
    }

    #[test]
    fn identified_planted_chain() {
        let draws = planted_regression_draws(&[[2.0, -2.0], [-2.0, 2.0]], 300, 4);
        let r = diagnose_chain(&draws, &DiagnoseOptions::default()).unwrap();
        let census = r.mode_census.as_ref().unwrap();
        assert_eq!(census.count, 2);
        assert!(!r.intra_switch_flag);
        assert_eq!(r.verdict, Verdict::Identified);
    }

    #[test]
    fn four_planted_modes_flag_switching() {
        // intercepts follow the component: 2 for slopes 2/−3, 1 for slopes −2/3
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut draws = Vec::new();
        for (s1, s2) in [(2.0, -2.0), (-3.0, 3.0)] {
            for swap in [false, true] {
                for _ in 0..200 {
                    let mut z = || 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                    let a = RegressionExpert::new(dv(&[2.0 + z(), s1 + z()]), 0.1).unwrap();
                    let b = RegressionExpert::new(dv(&[1.0 + z(), s2 + z()]), 0.1).unwrap();
                    let ex = if swap { vec![b, a] } else { vec![a, b] };
                    draws.push(MeModel::new(Variant::B, Weights::uniform(2), Experts::Regression(ex)).unwrap());
                }
            }
        }
        let r = diagnose_chain(&draws, &DiagnoseOptions::default()).unwrap();
        assert_eq!(r.mode_census.as_ref().unwrap().count, 4);
        assert!(r.intra_switch_flag);
        assert_eq!(r.verdict, Verdict::NotIdentified);
    }

    #[test]
    fn single_component_has_one_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws: Vec<MeModel> = (0..300)
            .map(|_| {
                let p = 0.4 + 0.02 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                MeModel::new(Variant::A, Weights::uniform(1), Experts::Binomial(vec![BinomialExpert::new(5, p).unwrap()])).unwrap()
            })
            .collect();
        let r = diagnose_chain(&draws, &DiagnoseOptions::default()).unwrap();
        assert_eq!(r.mode_census.unwrap().count, 1);
        assert!(diagnose_chain(&draws[..5], &DiagnoseOptions::default()).is_err());
    }

    #[test]
    fn merge_prefers_failures() {
        let a = IdentifiabilityReport::verdict_only(Verdict::Identified, "x");
        let b = IdentifiabilityReport::verdict_only(Verdict::NotIdentified, "y");
        let m = a.clone().merge(b);
        assert_eq!(m.verdict, Verdict::NotIdentified);
        assert_eq!(m.rule, "x; y");
        let u = IdentifiabilityReport::verdict_only(Verdict::Unknown, "");
        assert_eq!(u.merge(a).verdict, Verdict::Identified);
    }
}
