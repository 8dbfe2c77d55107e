use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{MoeError, Result};
use crate::stats;

/// Definition of the history state H_it that indexes the rows of a generalized
/// transition matrix. Time is the transition index t = 1..T; the covariate is a
/// binary (0/1) column of the raw covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum History {
    PrevState,
    PrevStateCovariate { column: usize },
    PrevStateTime,
    PrevStateTimeCovariate { column: usize },
}

impl History {
    /// Number of history states J for K states and T transitions.
    pub fn n_rows(self, n_states: usize, transitions: usize) -> usize {
        match self {
            History::PrevState => n_states,
            History::PrevStateCovariate { .. } => 2 * n_states,
            History::PrevStateTime => n_states * transitions,
            History::PrevStateTimeCovariate { .. } => 2 * n_states * transitions,
        }
    }

    pub fn uses_covariate(self) -> bool {
        matches!(self, History::PrevStateCovariate { .. } | History::PrevStateTimeCovariate { .. })
    }

    pub fn uses_time(self) -> bool {
        matches!(self, History::PrevStateTime | History::PrevStateTimeCovariate { .. })
    }

    pub fn covariate_column(self) -> Option<usize> {
        match self {
            History::PrevStateCovariate { column } | History::PrevStateTimeCovariate { column } => Some(column),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            History::PrevState => "prev",
            History::PrevStateCovariate { .. } => "prev-covariate",
            History::PrevStateTime => "prev-time",
            History::PrevStateTimeCovariate { .. } => "prev-time-covariate",
        }
    }

    pub fn from_name(s: &str, column: usize) -> Option<Self> {
        match s {
            "prev" | "prev-state" => Some(History::PrevState),
            "prev-covariate" | "prev-state-covariate" => Some(History::PrevStateCovariate { column }),
            "prev-time" | "prev-state-time" => Some(History::PrevStateTime),
            "prev-time-covariate" | "prev-state-time-covariate" => {
                Some(History::PrevStateTimeCovariate { column })
            }
            _ => None,
        }
    }

    /// Row index j for previous state `prev`, transition `t` (1-based) and binary covariate `x`.
    pub fn row_index(self, prev: usize, t: usize, x: usize, n_states: usize, transitions: usize) -> usize {
        match self {
            History::PrevState => prev,
            History::PrevStateCovariate { .. } => prev + n_states * x,
            History::PrevStateTime => prev + n_states * (t - 1),
            History::PrevStateTimeCovariate { .. } => {
                prev + n_states * (t - 1) + n_states * transitions * x
            }
        }
    }
}

fn binary_covariate(value: Option<f64>, history: History) -> Result<usize> {
    if !history.uses_covariate() {
        return Ok(0);
    }
    match value {
        Some(v) if v == 0.0 => Ok(0),
        Some(v) if v == 1.0 => Ok(1),
        Some(v) => Err(MoeError::InvalidData(format!("history covariate must be 0 or 1, got {v}"))),
        None => Err(MoeError::InvalidData("history needs a covariate value".into())),
    }
}

/// Transition counts n_{jk} of one series (conditioning on the first observation).
pub fn markov_counts(
    series: &[usize],
    history: History,
    n_states: usize,
    covariate: Option<f64>,
) -> Result<DMatrix<f64>> {
    if series.len() < 2 {
        return Err(MoeError::InvalidData("series needs at least two observations".into()));
    }
    if let Some(&bad) = series.iter().find(|&&s| s >= n_states) {
        return Err(MoeError::InvalidData(format!("state {} outside 1..={n_states}", bad + 1)));
    }
    let transitions = series.len() - 1;
    let x = binary_covariate(covariate, history)?;
    let mut counts = DMatrix::zeros(history.n_rows(n_states, transitions), n_states);
    for t in 1..series.len() {
        let j = history.row_index(series[t - 1], t, x, n_states, transitions);
        counts[(j, series[t])] += 1.0;
    }
    Ok(counts)
}

/// Mixture component over categorical series with a generalized transition matrix ξ (J × K).
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovExpert {
    history: History,
    xi: DMatrix<f64>,
}

impl MarkovExpert {
    pub fn new(history: History, xi: DMatrix<f64>) -> Result<Self> {
        if xi.ncols() < 2 {
            return Err(MoeError::InvalidParameter("Markov expert needs at least two states".into()));
        }
        for (j, row) in xi.row_iter().enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (row.sum() - 1.0).abs() > 1e-9 {
                return Err(MoeError::InvalidParameter(format!(
                    "row {} of the transition matrix is not a probability vector",
                    j + 1
                )));
            }
        }
        match history {
            History::PrevState | History::PrevStateTime if xi.nrows() % xi.ncols() != 0 => {
                return Err(MoeError::Dimension(format!(
                    "{} history rows for {} states",
                    xi.nrows(),
                    xi.ncols()
                )))
            }
            History::PrevStateCovariate { .. } | History::PrevStateTimeCovariate { .. }
                if xi.nrows() % (2 * xi.ncols()) != 0 =>
            {
                return Err(MoeError::Dimension(format!(
                    "{} history rows for {} states with a binary covariate",
                    xi.nrows(),
                    xi.ncols()
                )))
            }
            _ => {}
        }
        Ok(MarkovExpert { history, xi })
    }

    pub fn uniform(history: History, n_states: usize, transitions: usize) -> Self {
        let j = history.n_rows(n_states, transitions);
        MarkovExpert {
            history,
            xi: DMatrix::from_element(j, n_states, 1.0 / n_states as f64),
        }
    }

    pub fn history(&self) -> History {
        self.history
    }

    pub fn xi(&self) -> &DMatrix<f64> {
        &self.xi
    }

    pub fn n_states(&self) -> usize {
        self.xi.ncols()
    }

    /// T implied by a time-indexed history (None when the history ignores time).
    pub fn transitions(&self) -> Option<usize> {
        let k = self.xi.ncols();
        match self.history {
            History::PrevStateTime => Some(self.xi.nrows() / k),
            History::PrevStateTimeCovariate { .. } => Some(self.xi.nrows() / (2 * k)),
            _ => None,
        }
    }

    /// Σ_{j,k} n_jk log ξ_jk; −∞ when a used transition has probability zero.
    pub fn log_prob_counts(&self, counts: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for (n, xi) in counts.iter().zip(self.xi.iter()) {
            if *n > 0.0 {
                total += n * xi.ln();
            }
        }
        total
    }

    pub fn logprob(&self, series: &[usize], covariate: Option<f64>) -> Result<f64> {
        let counts = markov_counts(series, self.history, self.n_states(), covariate)?;
        if counts.nrows() != self.xi.nrows() {
            return Err(MoeError::Dimension(format!(
                "series implies {} history rows, expert has {}",
                counts.nrows(),
                self.xi.nrows()
            )));
        }
        Ok(self.log_prob_counts(&counts))
    }

    /// Simulates a path of `transitions` steps from initial state `start`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        start: usize,
        transitions: usize,
        covariate: Option<f64>,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let k = self.n_states();
        let x = binary_covariate(covariate, self.history)?;
        let mut s = vec![start];
        for t in 1..=transitions {
            let j = self.history.row_index(s[t - 1], t, x, k, transitions);
            if j >= self.xi.nrows() {
                return Err(MoeError::Dimension("series longer than the time-indexed history".into()));
            }
            let row: Vec<f64> = self.xi.row(j).iter().copied().collect();
            s.push(stats::sample_categorical(&row, rng));
        }
        Ok(s)
    }

    /// Persistence probabilities ξ_{j, prev(j)} for every history row.
    pub fn persistence(&self) -> Vec<f64> {
        let k = self.n_states();
        (0..self.xi.nrows()).map(|j| self.xi[(j, j % k)]).collect()
    }
}

/// Weighted MLE ξ_jk = Σ_i w_i n_ijk / Σ_i w_i n_ij·; rows without weight keep `previous`.
pub fn markov_mstep(counts: &[DMatrix<f64>], weights: &[f64], previous: &MarkovExpert) -> Result<MarkovExpert> {
    let mut pooled = DMatrix::zeros(previous.xi.nrows(), previous.xi.ncols());
    for (c, &w) in counts.iter().zip(weights) {
        if w > 0.0 {
            pooled += c * w;
        }
    }
    let mut xi = previous.xi.clone();
    for j in 0..pooled.nrows() {
        let total = pooled.row(j).sum();
        if total > 0.0 {
            let row = pooled.row(j) / total;
            xi.set_row(j, &row);
        }
    }
    MarkovExpert::new(previous.history, xi)
}

/// Dirichlet full conditionals d₀ + n^g for every row of one component.
pub fn markov_conditional(pooled_counts: &DMatrix<f64>, prior: &DMatrix<f64>) -> DMatrix<f64> {
    prior + pooled_counts
}

/// Draws ξ_g row by row from Dirichlet(d₀_j· + n^g_j·).
pub fn markov_dirichlet_draw<R: Rng + ?Sized>(
    pooled_counts: &DMatrix<f64>,
    prior: &DMatrix<f64>,
    history: History,
    rng: &mut R,
) -> Result<MarkovExpert> {
    let alpha = markov_conditional(pooled_counts, prior);
    let mut xi = DMatrix::zeros(alpha.nrows(), alpha.ncols());
    for j in 0..alpha.nrows() {
        let a: Vec<f64> = alpha.row(j).iter().copied().collect();
        let d = stats::dirichlet_sample(&a, rng);
        for (k, v) in d.into_iter().enumerate() {
            xi[(j, k)] = v;
        }
    }
    MarkovExpert::new(history, xi)
}

/// Log density of ξ under row-wise Dirichlet parameters.
pub fn markov_dirichlet_logpdf(xi: &DMatrix<f64>, alpha: &DMatrix<f64>) -> f64 {
    (0..xi.nrows())
        .map(|j| {
            let x: Vec<f64> = xi.row(j).iter().copied().collect();
            let a: Vec<f64> = alpha.row(j).iter().copied().collect();
            stats::dirichlet_logpdf(&x, &a)
        })
        .sum()
}
