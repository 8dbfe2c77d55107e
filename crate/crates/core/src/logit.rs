//! Weighted multinomial-logit maximization shared by the gating M-step and the
//! covariate-linked Plackett-Luce M-step.
//!
//! Each row carries a design-row index, a nonnegative target vector over the
//! choices, and an optional availability mask. The objective is
//! Σ_rows [Σ_c t_c x̃β_c − (Σ_c t_c) log Σ_{c available} exp(x̃β_c)]
//! with β_0 pinned at zero.

use nalgebra::{DMatrix, DVector};

use crate::stats::logsumexp;

/// Box constraint applied to every free coefficient.
pub const COEF_CAP: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct ChoiceRow {
    pub x: usize,
    pub target: Vec<f64>,
    pub avail: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct LogitProblem<'a> {
    pub design: &'a DMatrix<f64>,
    pub rows: Vec<ChoiceRow>,
    pub n_choices: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitFit {
    /// C × p coefficients, row 0 zero.
    pub coef: DMatrix<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    /// Some coefficient sits on the ±cap boundary (typically complete separation).
    pub capped: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LogitOptions {
    pub max_iter: usize,
    pub max_halvings: usize,
    pub cap: f64,
    pub tol: f64,
}

impl Default for LogitOptions {
    fn default() -> Self {
        LogitOptions {
            max_iter: 200,
            max_halvings: 30,
            cap: COEF_CAP,
            tol: 1e-12,
        }
    }
}

impl<'a> LogitProblem<'a> {
    fn linear(&self, coef: &DMatrix<f64>, row: &ChoiceRow) -> Vec<f64> {
        let x = self.design.row(row.x);
        (0..self.n_choices)
            .map(|c| x.iter().zip(coef.row(c).iter()).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn log_probs(&self, coef: &DMatrix<f64>, row: &ChoiceRow) -> Vec<f64> {
        let mut lin = self.linear(coef, row);
        if let Some(av) = &row.avail {
            for (v, &a) in lin.iter_mut().zip(av) {
                if !a {
                    *v = f64::NEG_INFINITY;
                }
            }
        }
        let lse = logsumexp(&lin);
        lin.iter_mut().for_each(|v| *v -= lse);
        lin
    }

    pub fn objective(&self, coef: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for row in &self.rows {
            let lp = self.log_probs(coef, row);
            for (t, l) in row.target.iter().zip(&lp) {
                if *t > 0.0 {
                    total += t * l;
                }
            }
        }
        total
    }

    /// Gradient and negative Hessian with respect to the free rows 1..C (row-major blocks).
    fn derivatives(&self, coef: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.design.ncols();
        let free = self.n_choices - 1;
        let dim = free * p;
        let mut grad = DVector::zeros(dim);
        let mut neg_hess = DMatrix::zeros(dim, dim);
        for row in &self.rows {
            let s: f64 = row.target.iter().sum();
            if s == 0.0 {
                continue;
            }
            let probs: Vec<f64> = self.log_probs(coef, row).iter().map(|l| l.exp()).collect();
            let x = self.design.row(row.x);
            let xx = x.transpose() * x;
            for c in 1..self.n_choices {
                let r = row.target[c] - s * probs[c];
                for k in 0..p {
                    grad[(c - 1) * p + k] += r * x[k];
                }
                for d in 1..self.n_choices {
                    let w = s * (if c == d { probs[c] } else { 0.0 } - probs[c] * probs[d]);
                    if w == 0.0 {
                        continue;
                    }
                    let mut block = neg_hess.view_mut(((c - 1) * p, (d - 1) * p), (p, p));
                    block += &xx * w;
                }
            }
        }
        (grad, neg_hess)
    }
}

fn pack(coef: &DMatrix<f64>) -> DVector<f64> {
    let (c, p) = coef.shape();
    DVector::from_iterator((c - 1) * p, (1..c).flat_map(|r| (0..p).map(move |k| (r, k))).map(|(r, k)| coef[(r, k)]))
}

fn unpack(theta: &DVector<f64>, c: usize, p: usize) -> DMatrix<f64> {
    let mut coef = DMatrix::zeros(c, p);
    for r in 1..c {
        for k in 0..p {
            coef[(r, k)] = theta[(r - 1) * p + k];
        }
    }
    coef
}

fn clamp(theta: &DVector<f64>, cap: f64) -> DVector<f64> {
    theta.map(|v| v.clamp(-cap, cap))
}

fn solve_newton(neg_hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let dim = grad.len();
    let scale = (neg_hess.trace() / dim.max(1) as f64).abs().max(1e-300);
    let mut ridge = 1e-10 * scale;
    for _ in 0..12 {
        let m = neg_hess + DMatrix::identity(dim, dim) * ridge;
        if let Some(ch) = m.cholesky() {
            let step = ch.solve(grad);
            if step.iter().all(|v| v.is_finite()) {
                return Some(step);
            }
        }
        ridge *= 100.0;
    }
    None
}

/// Maximizes the weighted multinomial-logit objective from `start` (row 0 is forced to zero).
///
/// Newton steps with step-halving; when 30 halvings fail to improve the
/// objective, a backtracking gradient-ascent step is tried before stopping.
/// Candidates are projected onto the coefficient box before evaluation, so the
/// returned objective is never below the objective at entry.
pub fn fit_logit(problem: &LogitProblem, start: &DMatrix<f64>, opts: LogitOptions) -> LogitFit {
    let c = problem.n_choices;
    let p = problem.design.ncols();
    let mut theta = clamp(&pack(start), opts.cap);
    let mut coef = unpack(&theta, c, p);
    let initial_objective = problem.objective(&coef);
    let mut obj = initial_objective;
    let mut iterations = 0;
    if c < 2 {
        return LogitFit {
            coef,
            objective: obj,
            initial_objective,
            iterations,
            capped: false,
        };
    }
    while iterations < opts.max_iter {
        iterations += 1;
        let (grad, neg_hess) = problem.derivatives(&coef);
        if grad.amax() < 1e-12 {
            break;
        }
        let mut accepted = None;
        if let Some(step) = solve_newton(&neg_hess, &grad) {
            let mut t = 1.0;
            for _ in 0..=opts.max_halvings {
                let cand = clamp(&(&theta + &step * t), opts.cap);
                let cand_coef = unpack(&cand, c, p);
                let cand_obj = problem.objective(&cand_coef);
                if cand_obj.is_finite() && cand_obj >= obj {
                    accepted = Some((cand, cand_coef, cand_obj));
                    break;
                }
                t *= 0.5;
            }
        }
        if accepted.is_none() {
            let mut t = 1.0 / (1.0 + neg_hess.norm());
            for _ in 0..60 {
                let cand = clamp(&(&theta + &grad * t), opts.cap);
                let cand_coef = unpack(&cand, c, p);
                let cand_obj = problem.objective(&cand_coef);
                if cand_obj.is_finite() && cand_obj > obj {
                    accepted = Some((cand, cand_coef, cand_obj));
                    break;
                }
                t *= 0.5;
            }
        }
        let Some((cand, cand_coef, cand_obj)) = accepted else {
            break;
        };
        let gain = cand_obj - obj;
        let moved = (&cand - &theta).amax();
        theta = cand;
        coef = cand_coef;
        obj = cand_obj;
        if gain <= opts.tol * (1.0 + obj.abs()) && moved < 1e-8 {
            break;
        }
        if gain <= 1e-15 * (1.0 + obj.abs()) && moved < 1e-6 {
            break;
        }
    }
    let capped = theta.iter().any(|v| v.abs() >= opts.cap * (1.0 - 1e-9));
    LogitFit {
        coef,
        objective: obj,
        initial_objective,
        iterations,
        capped,
    }
}

/// Gating-form problem: one row per observation with the responsibilities as targets.
pub fn gating_problem<'a>(design: &'a DMatrix<f64>, resp: &DMatrix<f64>) -> LogitProblem<'a> {
    let rows = (0..resp.nrows())
        .map(|i| ChoiceRow {
            x: i,
            target: resp.row(i).iter().copied().collect(),
            avail: None,
        })
        .collect();
    LogitProblem {
        design,
        rows,
        n_choices: resp.ncols(),
    }
}
