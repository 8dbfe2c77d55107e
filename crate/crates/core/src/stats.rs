//! Numeric helpers shared across the estimators: log-space arithmetic,
//! density evaluators used by priors and importance densities, and random
//! variate generators built on `rand_distr`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{MoeError, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max.is_infinite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalizes log weights in place into probabilities. Returns the log normalizer.
pub fn normalize_log(xs: &mut [f64]) -> f64 {
    let lse = logsumexp(xs);
    for x in xs.iter_mut() {
        *x = if lse.is_finite() { (*x - lse).exp() } else { f64::NAN };
    }
    lse
}

pub fn ln_binomial(n: u32, k: u32) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Log of the multivariate beta function B(a) = prod Γ(a_k) / Γ(sum a_k).
pub fn ln_multi_beta(alpha: &[f64]) -> f64 {
    alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(alpha.iter().sum())
}

/// Log of the multivariate gamma function Γ_d(a).
pub fn ln_multi_gamma(d: usize, a: f64) -> f64 {
    let df = d as f64;
    df * (df - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (0..d).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| MoeError::NotPositiveDefinite(what.to_string()))
}

pub fn log_det_from_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Multivariate normal log density with a precomputed Cholesky factor.
pub fn mvn_logpdf_chol(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    let l = chol.l();
    let sol = l
        .solve_lower_triangular(&diff)
        .expect("cholesky factor has positive diagonal");
    -0.5 * (d * LN_2PI + log_det_from_chol(chol) + sol.norm_squared())
}

pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(cov, "normal covariance")?;
    Ok(mvn_logpdf_chol(x, mean, &chol))
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean) * (x - mean) / var)
}

/// Inverse-gamma density with shape `a` and scale `b`: p(x) ∝ x^{-a-1} exp(-b/x).
pub fn inv_gamma_logpdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
}

pub fn beta_logpdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_multi_beta(&[a, b])
}

/// Dirichlet log density over the simplex (Lebesgue measure on the first K−1 coordinates).
pub fn dirichlet_logpdf(x: &[f64], alpha: &[f64]) -> f64 {
    let mut acc = -ln_multi_beta(alpha);
    for (&xi, &ai) in x.iter().zip(alpha) {
        if xi <= 0.0 {
            if ai == 1.0 {
                continue;
            }
            return f64::NEG_INFINITY;
        }
        acc += (ai - 1.0) * xi.ln();
    }
    acc
}

/// Inverse-Wishart log density IW(ν, S): p(Σ) ∝ |Σ|^{-(ν+d+1)/2} exp(-tr(S Σ⁻¹)/2).
pub fn inv_wishart_logpdf(sigma: &DMatrix<f64>, df: f64, scale: &DMatrix<f64>) -> Result<f64> {
    let d = sigma.nrows();
    let chol_sigma = cholesky(sigma, "inverse-Wishart argument")?;
    let chol_scale = cholesky(scale, "inverse-Wishart scale")?;
    let logdet_sigma = log_det_from_chol(&chol_sigma);
    let logdet_scale = log_det_from_chol(&chol_scale);
    let trace = chol_sigma.solve(scale).trace();
    let df_d = d as f64;
    Ok(0.5 * df * logdet_scale
        - 0.5 * df * df_d * std::f64::consts::LN_2
        - ln_multi_gamma(d, df / 2.0)
        - 0.5 * (df + df_d + 1.0) * logdet_sigma
        - 0.5 * trace)
}

pub fn std_normal_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draws from N(mean, cov) given the lower Cholesky factor of `cov`.
pub fn mvn_sample_chol<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    chol: &Cholesky<f64, Dyn>,
    rng: &mut R,
) -> DVector<f64> {
    mean + chol.l() * std_normal_vec(mean.len(), rng)
}

pub fn mvn_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = cholesky(cov, "normal covariance")?;
    Ok(mvn_sample_chol(mean, &chol, rng))
}

pub fn gamma_sample<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0)
        .expect("gamma shape must be positive")
        .sample(rng)
}

pub fn dirichlet_sample<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = alpha.iter().map(|&a| gamma_sample(a, rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter_mut().for_each(|x| *x /= total);
    } else {
        // all shapes tiny: the gamma draws underflowed, fall back to the largest shape
        let k = alpha
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        draws.iter_mut().enumerate().for_each(|(j, x)| *x = if j == k { 1.0 } else { 0.0 });
    }
    draws
}

pub fn beta_sample<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let x = gamma_sample(a, rng);
    let y = gamma_sample(b, rng);
    x / (x + y)
}

pub fn inv_gamma_sample<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    scale / gamma_sample(shape, rng)
}

/// Draws Σ ~ IW(df, scale) through a Bartlett draw of Σ⁻¹ ~ Wishart(df, scale⁻¹).
pub fn inv_wishart_sample<R: Rng + ?Sized>(
    df: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = scale.nrows();
    if df <= d as f64 - 1.0 {
        return Err(MoeError::InvalidParameter(format!(
            "inverse-Wishart degrees of freedom {df} must exceed d-1 = {}",
            d - 1
        )));
    }
    let scale_inv = cholesky(scale, "inverse-Wishart scale")?.inverse();
    let l = cholesky(&scale_inv, "inverse-Wishart scale inverse")?.l();
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let chi2 = 2.0 * gamma_sample((df - i as f64) / 2.0, rng);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let wishart = &la * la.transpose();
    let sigma = cholesky(&wishart, "Wishart draw")?.inverse();
    Ok(symmetrize(sigma))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Samples an index from unnormalized log weights.
pub fn sample_log_categorical<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> Option<usize> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let probs: Vec<f64> = logw.iter().map(|w| (w - max).exp()).collect();
    Some(sample_categorical(&probs, rng))
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &p) in probs.iter().enumerate() {
        if u < p {
            return k;
        }
        u -= p;
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Derives an independent seed for stream `index` from a master seed (splitmix64).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Shortest interval containing `mass` of the sorted draws.
pub fn hpd_interval(draws: &[f64], mass: f64) -> (f64, f64) {
    let mut sorted: Vec<f64> = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let keep = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (sorted[0], sorted[keep - 1]);
    for start in 0..=(n - keep) {
        let lo = sorted[start];
        let hi = sorted[start + keep - 1];
        if hi - lo < best.1 - best.0 {
            best = (lo, hi);
        }
    }
    best
}

/// Monte-Carlo standard error of a sample mean, corrected for autocorrelation by batch means.
pub fn batch_means_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let batches = (n as f64).sqrt().floor().max(1.0) as usize;
    let size = n / batches;
    if size < 2 || batches < 2 {
        return (variance(xs) / n as f64).sqrt();
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| mean(&xs[b * size..(b + 1) * size]))
        .collect();
    (variance(&means) / batches as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logsumexp_handles_infinities() {
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = logsumexp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn hpd_of_uniform_grid() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let (lo, hi) = hpd_interval(&xs, 0.95);
        assert_eq!(hi - lo, 949.0);
    }

    #[test]
    fn inverse_wishart_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let df = 8.0;
        let n = 20_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += inv_wishart_sample(df, &scale, &mut rng).unwrap();
        }
        acc /= n as f64;
        let expected = &scale / (df - 2.0 - 1.0);
        assert!((acc - expected).abs().max() < 0.02);
    }

    #[test]
    fn inverse_wishart_density_is_normalized_in_one_dimension() {
        // IW(ν, s) in d=1 is inverse-gamma(ν/2, s/2)
        let s = DMatrix::from_element(1, 1, 3.0);
        let x = DMatrix::from_element(1, 1, 0.7);
        let iw = inv_wishart_logpdf(&x, 5.0, &s).unwrap();
        let ig = inv_gamma_logpdf(0.7, 2.5, 1.5);
        assert!((iw - ig).abs() < 1e-12);
    }
}
