//! Domain types for the four-variant mixture-of-experts taxonomy and the
//! multinomial-logit gating network.
//!
//! Component indices are zero-based internally; component 0 is the gating
//! baseline whose coefficient row is pinned at zero.

use std::fmt;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{MoeError, Result};
use crate::experts::Experts;
use crate::stats::logsumexp;

/// Where covariates enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Finite mixture: p(y, z | x) = p(y | z) p(z).
    A,
    /// Mixture of regressions: p(y, z | x) = p(y | x, z) p(z).
    B,
    /// Simple mixture of experts: p(y, z | x) = p(y | z) p(z | x).
    C,
    /// Standard mixture-of-experts regression: p(y, z | x) = p(y | x, z) p(z | x).
    D,
}

impl Variant {
    pub fn gating_uses_covariates(self) -> bool {
        matches!(self, Variant::C | Variant::D)
    }

    pub fn experts_use_covariates(self) -> bool {
        matches!(self, Variant::B | Variant::D)
    }

    pub fn letter(self) -> char {
        match self {
            Variant::A => 'a',
            Variant::B => 'b',
            Variant::C => 'c',
            Variant::D => 'd',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_lowercase() {
            'a' => Some(Variant::A),
            'b' => Some(Variant::B),
            'c' => Some(Variant::C),
            'd' => Some(Variant::D),
            _ => None,
        }
    }

    pub const ALL: [Variant; 4] = [Variant::A, Variant::B, Variant::C, Variant::D];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Gaussian,
    GaussianRegression,
    Binomial,
    PlackettLuce,
    Markov,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::GaussianRegression => "regression",
            Family::Binomial => "binomial",
            Family::PlackettLuce => "plackett-luce",
            Family::Markov => "markov",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Some(Family::Gaussian),
            "regression" | "gaussian-regression" => Some(Family::GaussianRegression),
            "binomial" => Some(Family::Binomial),
            "plackett-luce" | "plackettluce" | "pl" | "rankings" => Some(Family::PlackettLuce),
            "markov" | "markov-chain" => Some(Family::Markov),
            _ => None,
        }
    }

    pub const ALL: [Family; 5] = [
        Family::Gaussian,
        Family::GaussianRegression,
        Family::Binomial,
        Family::PlackettLuce,
        Family::Markov,
    ];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcomes {
    /// n × d matrix of continuous outcomes.
    Continuous(DMatrix<f64>),
    /// Ordered ballots of zero-based candidate indices (partial rankings allowed).
    Rankings { ballots: Vec<Vec<usize>>, n_items: usize },
    /// Categorical series with zero-based states, each of length T+1.
    Categorical { series: Vec<Vec<usize>>, n_states: usize },
    /// Binomial success counts out of a common, known number of trials.
    Binomial { counts: Vec<u32>, trials: u32 },
}

impl Outcomes {
    pub fn len(&self) -> usize {
        match self {
            Outcomes::Continuous(y) => y.nrows(),
            Outcomes::Rankings { ballots, .. } => ballots.len(),
            Outcomes::Categorical { series, .. } => series.len(),
            Outcomes::Binomial { counts, .. } => counts.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        match self {
            Outcomes::Continuous(y) => {
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(MoeError::InvalidData("non-finite continuous outcome".into()));
                }
            }
            Outcomes::Rankings { ballots, n_items } => {
                for (i, b) in ballots.iter().enumerate() {
                    if b.is_empty() || b.len() > *n_items {
                        return Err(MoeError::InvalidData(format!(
                            "ballot {i} has length {} (must be 1..={n_items})",
                            b.len()
                        )));
                    }
                    let mut seen = vec![false; *n_items];
                    for &c in b {
                        if c >= *n_items {
                            return Err(MoeError::InvalidData(format!(
                                "ballot {i} ranks unknown candidate {}",
                                c + 1
                            )));
                        }
                        if seen[c] {
                            return Err(MoeError::InvalidData(format!(
                                "ballot {i} ranks candidate {} twice",
                                c + 1
                            )));
                        }
                        seen[c] = true;
                    }
                }
            }
            Outcomes::Categorical { series, n_states } => {
                let len = series.first().map(Vec::len).unwrap_or(0);
                for (i, s) in series.iter().enumerate() {
                    if s.len() < 2 {
                        return Err(MoeError::InvalidData(format!(
                            "series {i} has fewer than two observations"
                        )));
                    }
                    if s.len() != len {
                        return Err(MoeError::InvalidData(format!(
                            "series {i} has length {} but series 0 has length {len}",
                            s.len()
                        )));
                    }
                    if let Some(&bad) = s.iter().find(|&&k| k >= *n_states) {
                        return Err(MoeError::InvalidData(format!(
                            "series {i} has state {} outside 1..={n_states}",
                            bad + 1
                        )));
                    }
                }
            }
            Outcomes::Binomial { counts, trials } => {
                if let Some((i, c)) = counts.iter().enumerate().find(|(_, &c)| c > *trials) {
                    return Err(MoeError::InvalidData(format!(
                        "count {c} at observation {i} exceeds trials {trials}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Outcomes plus raw covariates; the design matrix (1, x_i) is synthesized.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    outcomes: Outcomes,
    covariates: DMatrix<f64>,
    design: DMatrix<f64>,
}

impl Dataset {
    pub fn new(outcomes: Outcomes, covariates: DMatrix<f64>) -> Result<Self> {
        outcomes.validate()?;
        let n = outcomes.len();
        if covariates.nrows() != n {
            return Err(MoeError::Dimension(format!(
                "{} covariate rows for {n} observations",
                covariates.nrows()
            )));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(MoeError::InvalidData("non-finite covariate".into()));
        }
        let q = covariates.ncols();
        let mut design = DMatrix::from_element(n, q + 1, 1.0);
        design.view_mut((0, 1), (n, q)).copy_from(&covariates);
        Ok(Dataset {
            outcomes,
            covariates,
            design,
        })
    }

    pub fn without_covariates(outcomes: Outcomes) -> Result<Self> {
        let n = outcomes.len();
        Dataset::new(outcomes, DMatrix::zeros(n, 0))
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    /// Number of raw covariates q (the design has q + 1 columns).
    pub fn q(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn outcomes(&self) -> &Outcomes {
        &self.outcomes
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn design_row(&self, i: usize) -> RowDVector<f64> {
        self.design.row(i).into_owned()
    }

    /// Keeps the rows listed in `rows`, in that order (rows may repeat).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let outcomes = match &self.outcomes {
            Outcomes::Continuous(y) => Outcomes::Continuous(y.select_rows(rows)),
            Outcomes::Rankings { ballots, n_items } => Outcomes::Rankings {
                ballots: rows.iter().map(|&i| ballots[i].clone()).collect(),
                n_items: *n_items,
            },
            Outcomes::Categorical { series, n_states } => Outcomes::Categorical {
                series: rows.iter().map(|&i| series[i].clone()).collect(),
                n_states: *n_states,
            },
            Outcomes::Binomial { counts, trials } => Outcomes::Binomial {
                counts: rows.iter().map(|&i| counts[i]).collect(),
                trials: *trials,
            },
        };
        Dataset::new(outcomes, self.covariates.select_rows(rows)).expect("subset of valid data")
    }

    pub fn with_covariates(&self, covariates: DMatrix<f64>) -> Result<Dataset> {
        Dataset::new(self.outcomes.clone(), covariates)
    }

    pub fn continuous(&self) -> Option<&DMatrix<f64>> {
        match &self.outcomes {
            Outcomes::Continuous(y) => Some(y),
            _ => None,
        }
    }
}

/// Multinomial-logit gating network with baseline component 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Gating {
    coef: DMatrix<f64>,
}

impl Gating {
    /// `coef` is G × (q+1); row 0 must be zero.
    pub fn new(coef: DMatrix<f64>) -> Result<Self> {
        if coef.nrows() == 0 {
            return Err(MoeError::InvalidParameter("gating needs at least one component".into()));
        }
        if coef.row(0).iter().any(|&v| v != 0.0) {
            return Err(MoeError::InvalidParameter("baseline gating row must be zero".into()));
        }
        if coef.iter().any(|v| !v.is_finite()) {
            return Err(MoeError::InvalidParameter("non-finite gating coefficient".into()));
        }
        Ok(Gating { coef })
    }

    /// Builds a gating from the G−1 non-baseline rows.
    pub fn from_free_rows(rows: &DMatrix<f64>) -> Result<Self> {
        let mut coef = DMatrix::zeros(rows.nrows() + 1, rows.ncols());
        coef.view_mut((1, 0), (rows.nrows(), rows.ncols())).copy_from(rows);
        Gating::new(coef)
    }

    pub fn zeros(g: usize, p: usize) -> Self {
        Gating {
            coef: DMatrix::zeros(g, p),
        }
    }

    pub fn components(&self) -> usize {
        self.coef.nrows()
    }

    /// Number of design columns q + 1.
    pub fn n_coef(&self) -> usize {
        self.coef.ncols()
    }

    pub fn coef(&self) -> &DMatrix<f64> {
        &self.coef
    }

    /// Log gating probabilities log η_g(x̃) for one design row.
    pub fn log_probs(&self, x_tilde: &[f64]) -> Result<Vec<f64>> {
        if x_tilde.len() != self.coef.ncols() {
            return Err(MoeError::Dimension(format!(
                "design row has {} entries, gating expects {}",
                x_tilde.len(),
                self.coef.ncols()
            )));
        }
        let mut eta: Vec<f64> = (0..self.coef.nrows())
            .map(|g| {
                self.coef
                    .row(g)
                    .iter()
                    .zip(x_tilde)
                    .map(|(c, x)| c * x)
                    .sum::<f64>()
            })
            .collect();
        let lse = logsumexp(&eta);
        eta.iter_mut().for_each(|v| *v -= lse);
        Ok(eta)
    }

    /// n × G matrix of log gating probabilities for every design row.
    pub fn log_probs_matrix(&self, design: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if design.ncols() != self.coef.ncols() {
            return Err(MoeError::Dimension(format!(
                "design has {} columns, gating expects {}",
                design.ncols(),
                self.coef.ncols()
            )));
        }
        let mut lin = design * self.coef.transpose();
        for mut row in lin.row_iter_mut() {
            let max = row.max();
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.add_scalar_mut(-lse);
        }
        Ok(lin)
    }
}

/// Gating probabilities η_g(x̃) = exp(x̃γ_g) / Σ_h exp(x̃γ_h), computed with max-subtraction.
pub fn gating_probs(gating: &Gating, x_tilde: &[f64]) -> Result<Vec<f64>> {
    Ok(gating.log_probs(x_tilde)?.into_iter().map(f64::exp).collect())
}

/// Relabels gating coefficients so that η*_g(x) = η_{σ(g)}(x), keeping the baseline at zero:
/// γ*_g = γ_{σ(g)} − γ_{σ(0)}.
pub fn relabel_gating(gating: &Gating, sigma: &Permutation) -> Result<Gating> {
    let g = gating.components();
    if sigma.len() != g {
        return Err(MoeError::Dimension(format!(
            "permutation of {} labels applied to {g} components",
            sigma.len()
        )));
    }
    let base = gating.coef.row(sigma.map(0)).into_owned();
    let mut coef = DMatrix::zeros(g, gating.n_coef());
    for k in 0..g {
        let row = gating.coef.row(sigma.map(k)) - &base;
        coef.set_row(k, &row);
    }
    coef.row_mut(0).fill(0.0);
    Ok(Gating { coef })
}

/// A bijection on component labels; `map(g)` is σ(g).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || seen[m] {
                return Err(MoeError::InvalidPermutation(map));
            }
            seen[m] = true;
        }
        Ok(Permutation(map))
    }

    pub fn identity(g: usize) -> Self {
        Permutation((0..g).collect())
    }

    pub fn random<R: Rng + ?Sized>(g: usize, rng: &mut R) -> Self {
        let mut v: Vec<usize> = (0..g).collect();
        v.shuffle(rng);
        Permutation(v)
    }

    /// All G! permutations in lexicographic order.
    pub fn all(g: usize) -> Vec<Permutation> {
        let mut out = Vec::new();
        let mut current: Vec<usize> = (0..g).collect();
        loop {
            out.push(Permutation(current.clone()));
            // next lexicographic permutation
            let Some(i) = (1..g).rev().find(|&i| current[i - 1] < current[i]) else {
                break;
            };
            let j = (i..g).rev().find(|&j| current[j] > current[i - 1]).unwrap();
            current.swap(i - 1, j);
            current[i..].reverse();
        }
        out
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map(&self, g: usize) -> usize {
        self.0[g]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (g, &m) in self.0.iter().enumerate() {
            inv[m] = g;
        }
        Permutation(inv)
    }

    /// (self ∘ other)(g) = self(other(g)).
    pub fn compose(&self, other: &Permutation) -> Permutation {
        Permutation(other.0.iter().map(|&g| self.0[g]).collect())
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(g, &m)| g == m)
    }

    /// Reorders a per-component list so that entry g of the result is entry σ(g) of the input.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.0.iter().map(|&m| items[m].clone()).collect()
    }
}

/// Hard component assignments z_i in 0..G.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    labels: Vec<usize>,
    components: usize,
}

impl Allocation {
    pub fn new(labels: Vec<usize>, components: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&z| z >= components) {
            return Err(MoeError::InvalidParameter(format!(
                "allocation label {bad} outside 0..{components}"
            )));
        }
        Ok(Allocation { labels, components })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.components];
        for &z in &self.labels {
            c[z] += 1;
        }
        c
    }

    /// n × G indicator matrix z_ig = 1{z_i = g}.
    pub fn indicators(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.labels.len(), self.components);
        for (i, &z) in self.labels.iter().enumerate() {
            m[(i, z)] = 1.0;
        }
        m
    }

    /// Relabels so that an observation in old component σ(g) is in new component g.
    pub fn relabel(&self, sigma: &Permutation) -> Allocation {
        let inv = sigma.inverse();
        Allocation {
            labels: self.labels.iter().map(|&z| inv.map(z)).collect(),
            components: self.components,
        }
    }
}

/// Mixing weights: covariate-free simplex (variants a, b) or MNL gating (variants c, d).
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    Fixed(DVector<f64>),
    Gating(Gating),
}

impl Weights {
    pub fn components(&self) -> usize {
        match self {
            Weights::Fixed(eta) => eta.len(),
            Weights::Gating(g) => g.components(),
        }
    }

    pub fn uniform(g: usize) -> Self {
        Weights::Fixed(DVector::from_element(g, 1.0 / g as f64))
    }

    pub fn log_matrix(&self, design: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Weights::Fixed(eta) => {
                let logs: Vec<f64> = eta.iter().map(|e| e.ln()).collect();
                Ok(DMatrix::from_fn(design.nrows(), eta.len(), |_, g| logs[g]))
            }
            Weights::Gating(g) => g.log_probs_matrix(design),
        }
    }

    pub fn relabel(&self, sigma: &Permutation) -> Result<Weights> {
        Ok(match self {
            Weights::Fixed(eta) => {
                Weights::Fixed(DVector::from_vec(sigma.apply(eta.as_slice())))
            }
            Weights::Gating(g) => Weights::Gating(relabel_gating(g, sigma)?),
        })
    }
}

/// A complete mixture-of-experts parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct MeModel {
    variant: Variant,
    weights: Weights,
    experts: Experts,
}

impl MeModel {
    pub fn new(variant: Variant, weights: Weights, experts: Experts) -> Result<Self> {
        if weights.components() != experts.len() {
            return Err(MoeError::Dimension(format!(
                "{} weights for {} experts",
                weights.components(),
                experts.len()
            )));
        }
        match (&weights, variant.gating_uses_covariates()) {
            (Weights::Fixed(eta), false) => {
                if eta.iter().any(|&e| !(e > 0.0)) || (eta.sum() - 1.0).abs() > 1e-9 {
                    return Err(MoeError::InvalidParameter(format!(
                        "weights {:?} are not a strictly positive simplex vector",
                        eta.as_slice()
                    )));
                }
            }
            (Weights::Gating(_), true) => {}
            (Weights::Fixed(_), true) => {
                return Err(MoeError::InvalidParameter(format!(
                    "variant ({variant}) needs a gating network"
                )))
            }
            (Weights::Gating(_), false) => {
                return Err(MoeError::InvalidParameter(format!(
                    "variant ({variant}) uses covariate-free weights"
                )))
            }
        }
        experts.check_variant(variant)?;
        Ok(MeModel {
            variant,
            weights,
            experts,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn family(&self) -> Family {
        self.experts.family()
    }

    pub fn components(&self) -> usize {
        self.experts.len()
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn experts(&self) -> &Experts {
        &self.experts
    }

    pub fn gating(&self) -> Option<&Gating> {
        match &self.weights {
            Weights::Gating(g) => Some(g),
            Weights::Fixed(_) => None,
        }
    }

    pub fn with_weights(&self, weights: Weights) -> Result<MeModel> {
        MeModel::new(self.variant, weights, self.experts.clone())
    }

    pub fn with_experts(&self, experts: Experts) -> Result<MeModel> {
        MeModel::new(self.variant, self.weights.clone(), experts)
    }

    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        if let Weights::Gating(g) = &self.weights {
            if g.n_coef() != data.q() + 1 {
                return Err(MoeError::Dimension(format!(
                    "gating has {} coefficients per component, design has {} columns",
                    g.n_coef(),
                    data.q() + 1
                )));
            }
        }
        self.experts.check_data(data, self.variant)
    }

    /// n × G matrix of log weight terms (log η_g or log η_g(x_i)).
    pub fn log_weight_matrix(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        self.weights.log_matrix(data.design())
    }

    /// n × G matrix of log p(y_i, z_i = g | x_i).
    pub fn log_joint_matrix(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        self.check_data(data)?;
        let lw = self.log_weight_matrix(data)?;
        let ld = self.experts.log_density_matrix(data)?;
        Ok(lw + ld)
    }

    /// Per-observation log p(y_i | x_i).
    pub fn log_likelihood_terms(&self, data: &Dataset) -> Result<Vec<f64>> {
        let lj = self.log_joint_matrix(data)?;
        Ok(lj
            .row_iter()
            .map(|row| logsumexp(row.transpose().as_slice()))
            .collect())
    }

    /// Relabels experts and weights consistently so that θ*_g = θ_{σ(g)}.
    pub fn relabel(&self, sigma: &Permutation) -> Result<MeModel> {
        Ok(MeModel {
            variant: self.variant,
            weights: self.weights.relabel(sigma)?,
            experts: self.experts.relabel(sigma)?,
        })
    }
}

/// Log of the joint density p(y_i, z_i = g | x_i) for a single observation and component.
pub fn log_joint(model: &MeModel, data: &Dataset, i: usize, g: usize) -> Result<f64> {
    if g >= model.components() {
        return Err(MoeError::InvalidParameter(format!(
            "component {g} outside 0..{}",
            model.components()
        )));
    }
    if i >= data.n() {
        return Err(MoeError::InvalidParameter(format!("observation {i} outside 0..{}", data.n())));
    }
    model.check_data(data)?;
    let logw = match model.weights() {
        Weights::Fixed(eta) => eta[g].ln(),
        Weights::Gating(gating) => {
            let row = data.design_row(i);
            gating.log_probs(row.as_slice())?[g]
        }
    };
    Ok(logw + model.experts().log_density(data, i, g)?)
}

/// Joint density p(y_i, z_i = g | x_i): the variant-appropriate weight times the expert density.
pub fn joint_density(model: &MeModel, data: &Dataset, i: usize, g: usize) -> Result<f64> {
    Ok(log_joint(model, data, i, g)?.exp())
}

/// Observed-data log-likelihood Σ_i log Σ_g p(y_i, z_i = g | x_i).
pub fn log_likelihood(model: &MeModel, data: &Dataset) -> Result<f64> {
    let total: f64 = model.log_likelihood_terms(data)?.iter().sum();
    if total.is_finite() {
        Ok(total)
    } else {
        Err(MoeError::NonFinite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::{GaussianExpert, RegressionExpert};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gating(rows: &[&[f64]]) -> Gating {
        let g = rows.len();
        let p = rows[0].len();
        Gating::new(DMatrix::from_fn(g, p, |r, c| rows[r][c])).unwrap()
    }

    #[test]
    fn zero_gating_is_uniform() {
        let gt = Gating::zeros(3, 2);
        let p = gating_probs(&gt, &[1.0, 4.2]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn binary_gating_matches_hand_evaluation() {
        let gt = gating(&[&[0.0, 0.0], &[0.0, 2.79]]);
        let p = gating_probs(&gt, &[1.0, 1.0]).unwrap();
        let expected = 2.79f64.exp() / (1.0 + 2.79f64.exp());
        assert!((p[1] - expected).abs() < 1e-14);
        assert!((p[1] - 0.94217).abs() < 1e-4);
        // odds ratio of roughly 16
        assert!((2.79f64.exp() - 16.28).abs() < 0.01);
        let p0 = gating_probs(&gt, &[1.0, 0.0]).unwrap();
        assert!((p0[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gating_rejects_dimension_mismatch() {
        let gt = Gating::zeros(2, 3);
        assert!(matches!(gating_probs(&gt, &[1.0]), Err(MoeError::Dimension(_))));
        assert!(Gating::new(DMatrix::from_element(2, 2, 1.0)).is_err());
    }

    #[test]
    fn gating_is_overflow_safe() {
        let gt = gating(&[&[0.0, 0.0], &[700.0, 0.0], &[699.0, 0.0]]);
        let p = gating_probs(&gt, &[1.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite() && *v > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relabel_identity_and_two_component_flip() {
        let gt = gating(&[&[0.0, 0.0], &[-1.2, 2.8]]);
        let same = relabel_gating(&gt, &Permutation::identity(2)).unwrap();
        assert_eq!(same, gt);
        let flipped = relabel_gating(&gt, &Permutation::new(vec![1, 0]).unwrap()).unwrap();
        assert_eq!(flipped.coef().row(1).iter().copied().collect::<Vec<_>>(), vec![1.2, -2.8]);
    }

    #[test]
    fn relabel_identity_holds_for_three_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let mut coef = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-3.0..3.0));
            coef.row_mut(0).fill(0.0);
            let gt = Gating::new(coef).unwrap();
            let sigma = Permutation::random(3, &mut rng);
            let star = relabel_gating(&gt, &sigma).unwrap();
            let x = [1.0, rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let p = gating_probs(&gt, &x).unwrap();
            let ps = gating_probs(&star, &x).unwrap();
            for g in 0..3 {
                assert!((ps[g] - p[sigma.map(g)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permutations_enumerate_factorial() {
        assert_eq!(Permutation::all(1).len(), 1);
        assert_eq!(Permutation::all(3).len(), 6);
        assert_eq!(Permutation::all(4).len(), 24);
        assert!(Permutation::new(vec![0, 0]).is_err());
        let s = Permutation::new(vec![2, 0, 1]).unwrap();
        assert!(s.compose(&s.inverse()).is_identity());
    }

    fn gaussian_1d(mean: f64, var: f64) -> GaussianExpert {
        GaussianExpert::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var)).unwrap()
    }

    #[test]
    fn single_gaussian_at_mean() {
        let e = GaussianExpert::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let model = MeModel::new(Variant::A, Weights::uniform(1), Experts::Gaussian(vec![e])).unwrap();
        let data = Dataset::without_covariates(Outcomes::Continuous(DMatrix::zeros(1, 2))).unwrap();
        let ll = log_likelihood(&model, &data).unwrap();
        assert!((ll + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        // variant a, G = 1: joint density is the expert density
        let jd = joint_density(&model, &data, 0, 0).unwrap();
        assert!((jd - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
    }

    #[test]
    fn duplicating_rows_doubles_loglik() {
        let model = MeModel::new(
            Variant::A,
            Weights::Fixed(DVector::from_vec(vec![0.3, 0.7])),
            Experts::Gaussian(vec![gaussian_1d(-1.0, 0.5), gaussian_1d(2.0, 1.5)]),
        )
        .unwrap();
        let y = DMatrix::from_column_slice(5, 1, &[0.1, -2.0, 3.3, 1.0, 0.4]);
        let data = Dataset::without_covariates(Outcomes::Continuous(y)).unwrap();
        let doubled = data.select_rows(&[0, 1, 2, 3, 4, 0, 1, 2, 3, 4]);
        let a = log_likelihood(&model, &data).unwrap();
        let b = log_likelihood(&model, &doubled).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn loglik_matches_direct_mixture_product() {
        let (w1, m1, v1, m2, v2) = (0.35, -0.5, 0.8, 1.7, 0.3);
        let model = MeModel::new(
            Variant::A,
            Weights::Fixed(DVector::from_vec(vec![w1, 1.0 - w1])),
            Experts::Gaussian(vec![gaussian_1d(m1, v1), gaussian_1d(m2, v2)]),
        )
        .unwrap();
        let ys = [0.2, -1.1, 2.0, 1.4];
        let data =
            Dataset::without_covariates(Outcomes::Continuous(DMatrix::from_column_slice(4, 1, &ys)))
                .unwrap();
        let phi = |y: f64, m: f64, v: f64| {
            (-(y - m) * (y - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
        };
        let direct: f64 = ys
            .iter()
            .map(|&y| w1 * phi(y, m1, v1) + (1.0 - w1) * phi(y, m2, v2))
            .product::<f64>()
            .ln();
        assert!((log_likelihood(&model, &data).unwrap() - direct).abs() < 1e-10);
    }

    fn regression_model(variant: Variant, rng: &mut ChaCha8Rng) -> (MeModel, Dataset) {
        let n = 12;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..2.0));
        let y = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-3.0..3.0));
        let data = Dataset::new(Outcomes::Continuous(y), x).unwrap();
        let experts = Experts::Regression(vec![
            RegressionExpert::new(DVector::from_vec(vec![0.5, 1.0]), 0.7).unwrap(),
            RegressionExpert::new(DVector::from_vec(vec![-1.0, -0.5]), 1.3).unwrap(),
            RegressionExpert::new(DVector::from_vec(vec![2.0, 0.0]), 0.4).unwrap(),
        ]);
        let weights = if variant.gating_uses_covariates() {
            let mut coef = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
            coef.row_mut(0).fill(0.0);
            Weights::Gating(Gating::new(coef).unwrap())
        } else {
            Weights::Fixed(DVector::from_vec(vec![0.2, 0.5, 0.3]))
        };
        (MeModel::new(variant, weights, experts).unwrap(), data)
    }

    #[test]
    fn joint_density_sums_to_mixture_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for variant in [Variant::B, Variant::D] {
            let (model, data) = regression_model(variant, &mut rng);
            let terms = model.log_likelihood_terms(&data).unwrap();
            for i in 0..data.n() {
                let sum: f64 = (0..3).map(|g| joint_density(&model, &data, i, g).unwrap()).sum();
                assert!((sum - terms[i].exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn variant_mismatch_is_rejected() {
        let e = gaussian_1d(0.0, 1.0);
        let err = MeModel::new(Variant::B, Weights::uniform(1), Experts::Gaussian(vec![e.clone()]));
        assert!(matches!(err, Err(MoeError::Incompatible { .. })));
        assert!(MeModel::new(Variant::C, Weights::uniform(1), Experts::Gaussian(vec![e])).is_err());
    }

    #[test]
    fn variant_a_ignores_covariate_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = DMatrix::from_fn(10, 1, |_, _| rng.random_range(-2.0..2.0));
        let x = DMatrix::from_fn(10, 2, |_, _| rng.random_range(-2.0..2.0));
        let data = Dataset::new(Outcomes::Continuous(y.clone()), x.clone()).unwrap();
        let mut rows: Vec<usize> = (0..10).collect();
        rows.reverse();
        let shuffled = Dataset::new(Outcomes::Continuous(y), x.select_rows(&rows)).unwrap();
        let model = MeModel::new(
            Variant::A,
            Weights::Fixed(DVector::from_vec(vec![0.4, 0.6])),
            Experts::Gaussian(vec![gaussian_1d(0.0, 1.0), gaussian_1d(1.0, 2.0)]),
        )
        .unwrap();
        assert_eq!(
            log_likelihood(&model, &data).unwrap(),
            log_likelihood(&model, &shuffled).unwrap()
        );
    }

    proptest! {
        #[test]
        fn gating_probs_on_simplex(
            coefs in proptest::collection::vec(-20.0f64..20.0, 6),
            x in proptest::collection::vec(-5.0f64..5.0, 2),
        ) {
            let mut m = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, coefs[0], coefs[1], coefs[2], coefs[3], coefs[4], coefs[5]]);
            m.row_mut(0).fill(0.0);
            let gt = Gating::new(m).unwrap();
            let p = gating_probs(&gt, &[1.0, x[0], x[1]]).unwrap();
            prop_assert!(p.iter().all(|v| *v > 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn relabel_round_trip(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut coef = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-5.0..5.0));
            coef.row_mut(0).fill(0.0);
            let gt = Gating::new(coef).unwrap();
            let sigma = Permutation::random(4, &mut rng);
            let back = relabel_gating(&relabel_gating(&gt, &sigma).unwrap(), &sigma.inverse()).unwrap();
            prop_assert_eq!(back.coef().row(0).iter().filter(|v| **v != 0.0).count(), 0);
            prop_assert!((back.coef() - gt.coef()).abs().max() < 1e-12);
        }

        #[test]
        fn loglik_invariant_under_relabeling(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (model, data) = regression_model(Variant::D, &mut rng);
            let sigma = Permutation::random(3, &mut rng);
            let a = log_likelihood(&model, &data).unwrap();
            let b = log_likelihood(&model.relabel(&sigma).unwrap(), &data).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
