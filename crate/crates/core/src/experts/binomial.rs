use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{MoeError, Result};
use crate::stats::{self, ln_binomial};

/// Lower/upper clamp on success probabilities after an M-step.
pub const PROB_CLAMP: f64 = 1e-10;

/// Binomial expert B(T, π_g) with T known and shared across components.
#[derive(Debug, Clone, PartialEq)]
pub struct BinomialExpert {
    trials: u32,
    prob: f64,
}

impl BinomialExpert {
    pub fn new(trials: u32, prob: f64) -> Result<Self> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(MoeError::InvalidParameter(format!(
                "success probability {prob} must lie in (0, 1)"
            )));
        }
        if trials == 0 {
            return Err(MoeError::InvalidParameter("binomial needs at least one trial".into()));
        }
        Ok(BinomialExpert { trials, prob })
    }

    pub fn trials(&self) -> u32 {
        self.trials
    }

    pub fn prob(&self) -> f64 {
        self.prob
    }

    pub fn logpmf(&self, y: u32) -> f64 {
        if y > self.trials {
            return f64::NEG_INFINITY;
        }
        ln_binomial(self.trials, y)
            + y as f64 * self.prob.ln()
            + (self.trials - y) as f64 * (1.0 - self.prob).ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        Binomial::new(self.trials as u64, self.prob)
            .expect("valid binomial")
            .sample(rng) as u32
    }
}

/// Mixture pmf Σ_g η_g C(T, y) π_g^y (1 − π_g)^{T−y}.
pub fn binomial_mixture_pmf(trials: u32, eta: &[f64], pi: &[f64], y: u32) -> Result<f64> {
    if y > trials {
        return Err(MoeError::InvalidData(format!("count {y} exceeds trials {trials}")));
    }
    if eta.len() != pi.len() {
        return Err(MoeError::Dimension(format!("{} weights for {} probabilities", eta.len(), pi.len())));
    }
    let c = binomial_coefficient(trials, y);
    Ok(eta
        .iter()
        .zip(pi)
        .map(|(&e, &p)| e * c * p.powi(y as i32) * (1.0 - p).powi((trials - y) as i32))
        .sum())
}

/// C(n, k) by the multiplicative formula (exact in f64 for moderate n).
pub fn binomial_coefficient(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |c, i| c * (n - i) as f64 / (i + 1) as f64)
}

/// The full pmf vector over 0..=T.
pub fn binomial_mixture_pmf_vec(trials: u32, eta: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
    (0..=trials).map(|y| binomial_mixture_pmf(trials, eta, pi, y)).collect()
}

/// Weighted MLE π = Σ w y / (T Σ w), clamped into [1e-10, 1 − 1e-10].
pub fn binomial_mstep(counts: &[u32], trials: u32, weights: &[f64]) -> Result<BinomialExpert> {
    let total: f64 = weights.iter().sum();
    if !(total > f64::MIN_POSITIVE) {
        return Err(MoeError::DegenerateComponent {
            component: 0,
            size: total,
        });
    }
    let succ: f64 = counts.iter().zip(weights).map(|(&y, &w)| w * y as f64).sum();
    let p = (succ / (trials as f64 * total)).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    BinomialExpert::new(trials, p)
}

/// Beta(a, b) prior on π_g; the uniform prior is Beta(1, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialPrior {
    pub a: f64,
    pub b: f64,
}

impl Default for BinomialPrior {
    fn default() -> Self {
        BinomialPrior { a: 1.0, b: 1.0 }
    }
}

/// Beta full conditionals Beta(a + Σy, b + Σ(T − y)) for each component.
pub fn binomial_conditionals(
    counts: &[u32],
    trials: u32,
    labels: &[usize],
    g_count: usize,
    prior: BinomialPrior,
) -> Vec<(f64, f64)> {
    let mut params = vec![(prior.a, prior.b); g_count];
    for (&y, &z) in counts.iter().zip(labels) {
        params[z].0 += y as f64;
        params[z].1 += (trials - y) as f64;
    }
    params
}

pub fn binomial_conjugate_draw<R: Rng + ?Sized>(
    counts: &[u32],
    trials: u32,
    labels: &[usize],
    g_count: usize,
    prior: BinomialPrior,
    rng: &mut R,
) -> Result<(Vec<BinomialExpert>, Vec<(f64, f64)>)> {
    let params = binomial_conditionals(counts, trials, labels, g_count, prior);
    let experts = params
        .iter()
        .map(|&(a, b)| {
            let p = stats::beta_sample(a, b, rng).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            BinomialExpert::new(trials, p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((experts, params))
}
