use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{MoeError, Result};
use crate::logit::{fit_logit, ChoiceRow, LogitOptions, LogitProblem};
use crate::stats;

/// Support floor keeping MM iterates in the simplex interior.
pub const SUPPORT_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum PlSupport {
    /// Covariate-free support p_g on the simplex.
    Fixed(DVector<f64>),
    /// Covariate-linked support p_gj(x) ∝ exp(x̃β_gj); M × (q+1), row 0 zero.
    Linked(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlackettLuceExpert {
    support: PlSupport,
}

impl PlackettLuceExpert {
    pub fn new(support: DVector<f64>) -> Result<Self> {
        if support.len() < 2 {
            return Err(MoeError::InvalidParameter("Plackett-Luce needs at least two candidates".into()));
        }
        if support.iter().any(|&v| !(v > 0.0) || !v.is_finite()) || (support.sum() - 1.0).abs() > 1e-9 {
            return Err(MoeError::InvalidParameter(
                "support parameters must be positive and sum to one".into(),
            ));
        }
        Ok(PlackettLuceExpert {
            support: PlSupport::Fixed(support),
        })
    }

    pub fn linked(coef: DMatrix<f64>) -> Result<Self> {
        if coef.nrows() < 2 {
            return Err(MoeError::InvalidParameter("Plackett-Luce needs at least two candidates".into()));
        }
        if coef.row(0).iter().any(|&v| v != 0.0) {
            return Err(MoeError::InvalidParameter("baseline candidate coefficients must be zero".into()));
        }
        if coef.iter().any(|v| !v.is_finite()) {
            return Err(MoeError::InvalidParameter("non-finite support coefficient".into()));
        }
        Ok(PlackettLuceExpert {
            support: PlSupport::Linked(coef),
        })
    }

    pub fn support(&self) -> &PlSupport {
        &self.support
    }

    pub fn is_linked(&self) -> bool {
        matches!(self.support, PlSupport::Linked(_))
    }

    pub fn n_items(&self) -> usize {
        match &self.support {
            PlSupport::Fixed(p) => p.len(),
            PlSupport::Linked(b) => b.nrows(),
        }
    }

    /// Support vector at design row x̃ (ignored for covariate-free support).
    pub fn support_at(&self, x_tilde: &[f64]) -> Vec<f64> {
        match &self.support {
            PlSupport::Fixed(p) => p.as_slice().to_vec(),
            PlSupport::Linked(b) => {
                let lin: Vec<f64> = (0..b.nrows())
                    .map(|j| b.row(j).iter().zip(x_tilde).map(|(c, x)| c * x).sum())
                    .collect();
                let lse = stats::logsumexp(&lin);
                lin.iter().map(|v| (v - lse).exp()).collect()
            }
        }
    }

    pub fn logprob(&self, ballot: &[usize], x_tilde: &[f64]) -> Result<f64> {
        plackett_luce_logprob(ballot, &self.support_at(x_tilde))
    }

    /// Draws a ballot of length `len` by sequential choice.
    pub fn sample<R: Rng + ?Sized>(&self, len: usize, x_tilde: &[f64], rng: &mut R) -> Vec<usize> {
        let p = self.support_at(x_tilde);
        let mut avail = vec![true; p.len()];
        let mut ballot = Vec::with_capacity(len);
        for _ in 0..len.min(p.len()) {
            let probs: Vec<f64> = p.iter().zip(&avail).map(|(&v, &a)| if a { v } else { 0.0 }).collect();
            let c = stats::sample_categorical(&probs, rng);
            avail[c] = false;
            ballot.push(c);
        }
        ballot
    }
}

fn check_ballot(ballot: &[usize], m: usize) -> Result<()> {
    let mut seen = vec![false; m];
    for &c in ballot {
        if c >= m {
            return Err(MoeError::InvalidData(format!("unknown candidate {}", c + 1)));
        }
        if seen[c] {
            return Err(MoeError::InvalidData(format!("candidate {} ranked twice", c + 1)));
        }
        seen[c] = true;
    }
    Ok(())
}

/// Log probability of an ordered (possibly partial) ballot:
/// Σ_j [log p_{c_j} − log Σ_{candidates not yet ranked} p].
pub fn plackett_luce_logprob(ballot: &[usize], support: &[f64]) -> Result<f64> {
    let m = support.len();
    check_ballot(ballot, m)?;
    let mut avail = vec![true; m];
    let mut total = 0.0;
    for &c in ballot {
        let denom: f64 = support.iter().zip(&avail).filter(|(_, &a)| a).map(|(v, _)| v).sum();
        total += support[c].ln() - denom.ln();
        avail[c] = false;
    }
    Ok(total)
}

/// Weighted log-likelihood Σ_i w_i log P(ballot_i | p).
pub fn weighted_objective(ballots: &[Vec<usize>], weights: &[f64], support: &[f64]) -> f64 {
    ballots
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(b, &w)| w * plackett_luce_logprob(b, support).unwrap_or(f64::NEG_INFINITY))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlUpdate {
    pub expert: PlackettLuceExpert,
    /// Candidates with no weighted first-choice wins, pinned at the support floor.
    pub pinned: Vec<usize>,
    pub iterations: usize,
}

/// Weighted MM update of covariate-free support.
///
/// Each iteration sets p_j ← W_j / Σ_{stages with j available} w / (tail sum), skipping
/// stages with a single remaining candidate, floors at 1e-10 and renormalizes.
pub fn plackett_luce_mstep(
    ballots: &[Vec<usize>],
    weights: &[f64],
    n_items: usize,
    start: Option<&[f64]>,
) -> Result<PlUpdate> {
    if ballots.len() != weights.len() {
        return Err(MoeError::Dimension(format!(
            "{} weights for {} ballots",
            weights.len(),
            ballots.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > f64::MIN_POSITIVE) {
        return Err(MoeError::DegenerateComponent {
            component: 0,
            size: total,
        });
    }
    for b in ballots {
        check_ballot(b, n_items)?;
    }
    let mut wins = vec![0.0; n_items];
    for (b, &w) in ballots.iter().zip(weights) {
        for (j, &c) in b.iter().enumerate() {
            if n_items - j > 1 {
                wins[c] += w;
            }
        }
    }
    let pinned: Vec<usize> = (0..n_items).filter(|&j| wins[j] <= 0.0).collect();
    let mut p: Vec<f64> = match start {
        Some(s) if s.len() == n_items => s.iter().map(|v| v.max(SUPPORT_FLOOR)).collect(),
        _ => vec![1.0 / n_items as f64; n_items],
    };
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    let mut iterations = 0;
    let mut avail = vec![true; n_items];
    for _ in 0..20_000 {
        iterations += 1;
        let mut denom = vec![0.0; n_items];
        for (b, &w) in ballots.iter().zip(weights) {
            if w <= 0.0 {
                continue;
            }
            avail.iter_mut().for_each(|a| *a = true);
            let mut tail: f64 = p.iter().sum();
            for (j, &c) in b.iter().enumerate() {
                if n_items - j <= 1 {
                    break;
                }
                let r = w / tail;
                for (k, a) in avail.iter().enumerate() {
                    if *a {
                        denom[k] += r;
                    }
                }
                avail[c] = false;
                tail = p.iter().zip(&avail).filter(|(_, &a)| a).map(|(v, _)| v).sum();
            }
        }
        let mut next: Vec<f64> = (0..n_items)
            .map(|k| {
                if denom[k] > 0.0 {
                    (wins[k] / denom[k]).max(SUPPORT_FLOOR)
                } else {
                    p[k]
                }
            })
            .collect();
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= s);
        let change = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        p = next;
        if change < 1e-12 {
            break;
        }
    }
    Ok(PlUpdate {
        expert: PlackettLuceExpert::new(DVector::from_vec(p))?,
        pinned,
        iterations,
    })
}

/// Weighted update of covariate-linked support coefficients via the shared logit solver.
pub fn plackett_luce_linked_mstep(
    ballots: &[Vec<usize>],
    design: &DMatrix<f64>,
    weights: &[f64],
    start: &DMatrix<f64>,
) -> Result<(PlackettLuceExpert, bool)> {
    let m = start.nrows();
    let mut rows = Vec::new();
    for (i, (b, &w)) in ballots.iter().zip(weights).enumerate() {
        if w <= 0.0 {
            continue;
        }
        let mut avail = vec![true; m];
        for (j, &c) in b.iter().enumerate() {
            if m - j <= 1 {
                break;
            }
            let mut target = vec![0.0; m];
            target[c] = w;
            rows.push(ChoiceRow {
                x: i,
                target,
                avail: Some(avail.clone()),
            });
            avail[c] = false;
        }
    }
    let problem = LogitProblem {
        design,
        rows,
        n_choices: m,
    };
    let fit = fit_logit(&problem, start, LogitOptions::default());
    Ok((PlackettLuceExpert::linked(fit.coef)?, fit.capped))
}

/// Dirichlet(a, …, a) prior on the support, sampled through gamma latent variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for PlPrior {
    fn default() -> Self {
        PlPrior { shape: 1.0, rate: 1.0 }
    }
}

/// One Gibbs update of covariate-free support for the ballots of one component,
/// using exponential latent variables per choice stage.
pub fn plackett_luce_gibbs<R: Rng + ?Sized>(
    ballots: &[&Vec<usize>],
    current: &[f64],
    prior: PlPrior,
    rng: &mut R,
) -> Result<PlackettLuceExpert> {
    let m = current.len();
    let total = stats::gamma_sample(m as f64 * prior.shape, rng) / prior.rate;
    let lambda: Vec<f64> = current.iter().map(|p| p * total).collect();
    let mut wins = vec![0.0; m];
    let mut rate = vec![prior.rate; m];
    let mut avail = vec![true; m];
    for b in ballots {
        avail.iter_mut().for_each(|a| *a = true);
        for (j, &c) in b.iter().enumerate() {
            if m - j <= 1 {
                break;
            }
            let tail: f64 = lambda.iter().zip(&avail).filter(|(_, &a)| a).map(|(v, _)| v).sum();
            let z = stats::gamma_sample(1.0, rng) / tail;
            for (k, a) in avail.iter().enumerate() {
                if *a {
                    rate[k] += z;
                }
            }
            wins[c] += 1.0;
            avail[c] = false;
        }
    }
    let mut draw: Vec<f64> = (0..m)
        .map(|k| stats::gamma_sample(prior.shape + wins[k], rng) / rate[k])
        .collect();
    let s: f64 = draw.iter().sum();
    draw.iter_mut().for_each(|v| *v = (*v / s).max(SUPPORT_FLOOR));
    let s: f64 = draw.iter().sum();
    draw.iter_mut().for_each(|v| *v /= s);
    PlackettLuceExpert::new(DVector::from_vec(draw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Permutation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_evaluated_ballots() {
        let v = plackett_luce_logprob(&[0], &[0.5, 0.5]).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        let v = plackett_luce_logprob(&[1, 0, 2], &[0.5, 0.3, 0.2]).unwrap();
        let expected = (0.3f64 / 1.0).ln() + (0.5f64 / 0.7).ln() + (0.2f64 / 0.2).ln();
        assert!((v - expected).abs() < 1e-14);
        assert!(plackett_luce_logprob(&[0, 0], &[0.5, 0.5]).is_err());
        assert!(plackett_luce_logprob(&[3], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn full_rankings_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in 2..=5 {
            let p = stats::dirichlet_sample(&vec![1.0; m], &mut rng);
            let total: f64 = Permutation::all(m)
                .iter()
                .map(|s| plackett_luce_logprob(s.as_slice(), &p).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_ballot_goes_to_boundary() {
        let up = plackett_luce_mstep(&[vec![0, 1]], &[1.0], 2, None).unwrap();
        let PlSupport::Fixed(p) = up.expert.support() else { panic!() };
        assert!(p[1] < 1e-9);
        assert_eq!(up.pinned, vec![1]);
    }

    #[test]
    fn symmetric_ballots_give_uniform_support() {
        let ballots: Vec<Vec<usize>> = Permutation::all(3).into_iter().map(|s| s.as_slice().to_vec()).collect();
        let up = plackett_luce_mstep(&ballots, &[1.0; 6], 3, Some(&[0.6, 0.3, 0.1])).unwrap();
        let PlSupport::Fixed(p) = up.expert.support() else { panic!() };
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mm_objective_is_monotone_and_matches_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let truth = PlackettLuceExpert::new(DVector::from_vec(vec![0.5, 0.3, 0.2])).unwrap();
        let ballots: Vec<Vec<usize>> = (0..40).map(|_| truth.sample(3, &[], &mut rng)).collect();
        let weights: Vec<f64> = (0..40).map(|_| rng.random_range(0.1..1.0)).collect();
        let mut prev = f64::NEG_INFINITY;
        let mut p = vec![1.0 / 3.0; 3];
        for _ in 0..50 {
            let up = plackett_luce_mstep(&ballots, &weights, 3, Some(&p)).unwrap();
            let PlSupport::Fixed(q) = up.expert.support() else { panic!() };
            let obj = weighted_objective(&ballots, &weights, q.as_slice());
            assert!(obj >= prev - 1e-12);
            prev = obj;
            p = q.as_slice().to_vec();
        }
        let mut best = f64::NEG_INFINITY;
        for a in 1..1000 {
            for b in 1..(1000 - a) {
                let s = [a as f64 * 0.001, b as f64 * 0.001, 1.0 - (a + b) as f64 * 0.001];
                best = best.max(weighted_objective(&ballots, &weights, &s));
            }
        }
        assert!(prev >= best - 1e-6);
    }

    #[test]
    fn linked_support_with_intercept_only_matches_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = PlackettLuceExpert::new(DVector::from_vec(vec![0.2, 0.5, 0.3])).unwrap();
        let ballots: Vec<Vec<usize>> = (0..60).map(|_| truth.sample(2, &[], &mut rng)).collect();
        let w = vec![1.0; 60];
        let fixed = plackett_luce_mstep(&ballots, &w, 3, None).unwrap();
        let design = DMatrix::from_element(60, 1, 1.0);
        let (linked, capped) =
            plackett_luce_linked_mstep(&ballots, &design, &w, &DMatrix::zeros(3, 1)).unwrap();
        assert!(!capped);
        let PlSupport::Fixed(p) = fixed.expert.support() else { panic!() };
        let q = linked.support_at(&[1.0]);
        for k in 0..3 {
            assert!((p[k] - q[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn gibbs_moments_follow_uniform_prior_without_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = vec![0.7, 0.2, 0.1];
        let mut acc = [0.0; 3];
        let n = 10_000;
        for _ in 0..n {
            let e = plackett_luce_gibbs(&[], &p, PlPrior::default(), &mut rng).unwrap();
            let PlSupport::Fixed(q) = e.support() else { panic!() };
            p = q.as_slice().to_vec();
            for k in 0..3 {
                acc[k] += p[k];
            }
        }
        // Dirichlet(1,1,1): mean 1/3, sd sqrt(2/36)
        let se = (2.0f64 / 36.0 / n as f64).sqrt();
        for a in acc {
            assert!((a / n as f64 - 1.0 / 3.0).abs() < 4.0 * se);
        }
    }
}
