//! Post-hoc label-switching resolution by k-means on pooled component features.

use crate::cluster::kmeans;
use crate::error::{MoeError, Result};
use crate::experts::{Experts, PlSupport};
use crate::model::{MeModel, Permutation};

/// Largest G for which exhaustive permutation search is done without an override.
pub const MAX_EXHAUSTIVE_COMPONENTS: usize = 6;

/// Family feature map of component g: Gaussian (μ, log diag chol Σ), regression β,
/// binomial π, Markov persistence probabilities, Plackett-Luce log support.
pub fn component_features(model: &MeModel, g: usize) -> Vec<f64> {
    match model.experts() {
        Experts::Gaussian(v) => {
            let mut f: Vec<f64> = v[g].mean().iter().copied().collect();
            f.extend(v[g].chol().l().diagonal().iter().map(|d| d.ln()));
            f
        }
        Experts::Regression(v) => v[g].beta().iter().copied().collect(),
        Experts::Binomial(v) => vec![v[g].prob()],
        Experts::Markov(v) => v[g].persistence(),
        Experts::PlackettLuce(v) => match v[g].support() {
            PlSupport::Fixed(p) => p.iter().map(|x| x.ln()).collect(),
            PlSupport::Linked(b) => b.iter().copied().collect(),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relabeled {
    pub models: Vec<MeModel>,
    /// σ per draw; the relabeled draw is `model.relabel(σ)`.
    pub permutations: Vec<Permutation>,
    /// Draws whose best assignment is not unique or whose components share a cluster.
    pub flagged: Vec<bool>,
    pub centers: Vec<Vec<f64>>,
}

impl Relabeled {
    pub fn flagged_fraction(&self) -> f64 {
        self.flagged.iter().filter(|&&f| f).count() as f64 / self.flagged.len().max(1) as f64
    }
}

/// Clusters the G feature vectors of every draw into G groups and relabels each
/// draw by the permutation with minimum total squared distance to the centers.
pub fn resolve_label_switching(models: &[MeModel], allow_large: bool, seed: u64) -> Result<Relabeled> {
    let Some(first) = models.first() else {
        return Err(MoeError::TooFewDraws { needed: 1, have: 0 });
    };
    let g_count = first.components();
    if models.len() < 10 * g_count {
        return Err(MoeError::TooFewDraws {
            needed: 10 * g_count,
            have: models.len(),
        });
    }
    if g_count > MAX_EXHAUSTIVE_COMPONENTS && !allow_large {
        return Err(MoeError::Unsupported(format!(
            "exhaustive relabeling over {g_count}! permutations; pass an explicit override"
        )));
    }
    let features: Vec<Vec<Vec<f64>>> = models
        .iter()
        .map(|m| (0..g_count).map(|g| component_features(m, g)).collect())
        .collect();
    let pooled: Vec<Vec<f64>> = features.iter().flatten().cloned().collect();
    let km = kmeans(&pooled, g_count, 5, seed);
    let centers = km.centers;
    let perms = Permutation::all(g_count);
    let dist = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
    let mut out_models = Vec::with_capacity(models.len());
    let mut out_perms = Vec::with_capacity(models.len());
    let mut flagged = Vec::with_capacity(models.len());
    for (s, m) in models.iter().enumerate() {
        let f = &features[s];
        let mut best = (f64::INFINITY, 0usize);
        let mut second = f64::INFINITY;
        for (k, sigma) in perms.iter().enumerate() {
            let cost: f64 = (0..g_count).map(|g| dist(&f[sigma.map(g)], &centers[g])).sum();
            if cost < best.0 {
                second = best.0;
                best = (cost, k);
            } else if cost < second {
                second = cost;
            }
        }
        let labels = &km.labels[s * g_count..(s + 1) * g_count];
        let mut seen = vec![false; g_count];
        let shared = labels.iter().any(|&l| std::mem::replace(&mut seen[l], true));
        let tie = g_count > 1 && (second - best.0).abs() <= 1e-12 * (1.0 + best.0);
        flagged.push(shared || tie);
        let sigma = perms[best.1].clone();
        out_models.push(m.relabel(&sigma)?);
        out_perms.push(sigma);
    }
    Ok(Relabeled {
        models: out_models,
        permutations: out_perms,
        flagged,
        centers,
    })
}
