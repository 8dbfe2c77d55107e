use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{MoeError, Result};
use crate::stats::{self, cholesky, mvn_logpdf_chol};

/// Multivariate normal expert N(μ_g, Σ_g).
#[derive(Debug, Clone)]
pub struct GaussianExpert {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for GaussianExpert {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl GaussianExpert {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(MoeError::Dimension(format!(
                "mean of length {} with {}×{} covariance",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(MoeError::InvalidParameter("non-finite Gaussian parameter".into()));
        }
        let cov = stats::symmetrize(cov);
        let chol = cholesky(&cov, "Gaussian expert covariance")?;
        Ok(GaussianExpert { mean, cov, chol })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn chol(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn logpdf(&self, y: &DVector<f64>) -> f64 {
        mvn_logpdf_chol(y, &self.mean, &self.chol)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        stats::mvn_sample_chol(&self.mean, &self.chol, rng)
    }
}

pub fn gaussian_logpdf(y: &DVector<f64>, expert: &GaussianExpert) -> Result<f64> {
    if y.len() != expert.dim() {
        return Err(MoeError::Dimension(format!(
            "outcome of length {} for a {}-variate expert",
            y.len(),
            expert.dim()
        )));
    }
    Ok(expert.logpdf(y))
}

/// Result of a weighted Gaussian M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianUpdate {
    pub expert: GaussianExpert,
    /// Ridge ε added to the diagonal to restore positive definiteness (0 when none was needed).
    pub ridge: f64,
}

/// Weighted mean and (biased) covariance of the rows of `y`.
pub fn weighted_moments(y: &DMatrix<f64>, w: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let total: f64 = w.iter().sum();
    if !(total > f64::MIN_POSITIVE) || !total.is_finite() {
        return Err(MoeError::DegenerateComponent {
            component: 0,
            size: total,
        });
    }
    let d = y.ncols();
    let mut mean = DVector::zeros(d);
    for (i, &wi) in w.iter().enumerate() {
        if wi != 0.0 {
            mean += y.row(i).transpose() * wi;
        }
    }
    mean /= total;
    let mut cov = DMatrix::zeros(d, d);
    for (i, &wi) in w.iter().enumerate() {
        if wi != 0.0 {
            let r = y.row(i).transpose() - &mean;
            cov += &r * r.transpose() * wi;
        }
    }
    cov /= total;
    Ok((mean, cov, total))
}

/// Weighted maximum-likelihood update of one Gaussian expert.
///
/// When the weighted covariance is not positive definite, ε·I is added with
/// ε = 1e-8·trace/d (base 1e-8 for a zero trace), growing tenfold until the
/// Cholesky factorization succeeds.
pub fn gaussian_mstep(y: &DMatrix<f64>, weights: &[f64]) -> Result<GaussianUpdate> {
    if weights.len() != y.nrows() {
        return Err(MoeError::Dimension(format!(
            "{} weights for {} observations",
            weights.len(),
            y.nrows()
        )));
    }
    let (mean, cov, _) = weighted_moments(y, weights)?;
    let d = y.ncols();
    if let Ok(expert) = GaussianExpert::new(mean.clone(), cov.clone()) {
        return Ok(GaussianUpdate { expert, ridge: 0.0 });
    }
    let trace = cov.trace();
    let mut ridge = if trace > 0.0 { 1e-8 * trace / d as f64 } else { 1e-8 };
    for _ in 0..20 {
        let reg = &cov + DMatrix::identity(d, d) * ridge;
        if let Ok(expert) = GaussianExpert::new(mean.clone(), reg) {
            return Ok(GaussianUpdate { expert, ridge });
        }
        ridge *= 10.0;
    }
    Err(MoeError::NotPositiveDefinite(
        "weighted covariance could not be regularized".into(),
    ))
}

/// Semi-conjugate prior μ ~ N(μ₀, Λ₀), Σ ~ IW(ν₀, S₀); optionally Σ is known.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: DVector<f64>,
    pub mean_cov: DMatrix<f64>,
    pub df: f64,
    pub scale: DMatrix<f64>,
    /// When set, Σ_g is held at this value and never sampled.
    pub known_cov: Option<DMatrix<f64>>,
}

impl GaussianPrior {
    /// Weakly informative default centred on the data: μ₀ = ȳ, Λ₀ = 10²·diag(var),
    /// ν₀ = d + 2, S₀ = diag(var) (so E[Σ] equals the marginal variances).
    pub fn data_based(y: &DMatrix<f64>) -> Self {
        let d = y.ncols();
        let w = vec![1.0; y.nrows()];
        let (mean, cov, _) = weighted_moments(y, &w).unwrap_or((DVector::zeros(d), DMatrix::identity(d, d), 0.0));
        let var = DVector::from_iterator(d, cov.diagonal().iter().map(|v| if *v > 0.0 { *v } else { 1.0 }));
        let diag = DMatrix::from_diagonal(&var);
        GaussianPrior {
            mean,
            mean_cov: &diag * 100.0,
            df: d as f64 + 2.0,
            scale: diag,
            known_cov: None,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.mean.len() != d || self.mean_cov.nrows() != d || self.scale.nrows() != d {
            return Err(MoeError::Dimension(format!("Gaussian prior is not {d}-variate")));
        }
        cholesky(&self.mean_cov, "prior mean covariance")?;
        cholesky(&self.scale, "prior scale")?;
        if self.df <= d as f64 - 1.0 {
            return Err(MoeError::InvalidParameter(format!(
                "prior degrees of freedom {} must exceed d-1",
                self.df
            )));
        }
        if let Some(k) = &self.known_cov {
            cholesky(k, "known covariance")?;
        }
        Ok(())
    }
}

/// Sufficient statistics of the observations allocated to one component.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSuff {
    pub count: usize,
    pub sum: DVector<f64>,
}

impl GaussianSuff {
    pub fn from_rows(y: &DMatrix<f64>, rows: &[usize]) -> Self {
        let mut sum = DVector::zeros(y.ncols());
        for &i in rows {
            sum += y.row(i).transpose();
        }
        GaussianSuff {
            count: rows.len(),
            sum,
        }
    }

    pub fn ybar(&self) -> DVector<f64> {
        if self.count == 0 {
            self.sum.clone()
        } else {
            &self.sum / self.count as f64
        }
    }
}

/// Full conditional of μ_g given Σ_g: N(μ_ng, Λ_ng) with
/// Λ_ng = (Λ₀⁻¹ + n_g Σ⁻¹)⁻¹ and μ_ng = Λ_ng(Λ₀⁻¹μ₀ + Σ⁻¹ n_g ȳ_g).
pub fn mean_conditional(
    prior: &GaussianPrior,
    cov: &DMatrix<f64>,
    suff: &GaussianSuff,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if suff.count == 0 {
        return Ok((prior.mean.clone(), prior.mean_cov.clone()));
    }
    let prior_prec = cholesky(&prior.mean_cov, "prior mean covariance")?.inverse();
    let cov_inv = cholesky(cov, "component covariance")?.inverse();
    let n = suff.count as f64;
    let post_prec = &prior_prec + &cov_inv * n;
    let post_cov = stats::symmetrize(cholesky(&post_prec, "posterior precision")?.inverse());
    let post_mean = &post_cov * (&prior_prec * &prior.mean + &cov_inv * &suff.sum);
    Ok((post_mean, post_cov))
}

/// Full conditional of Σ_g given μ_g: IW(ν₀ + n_g, S₀ + Σ_i (y_i − μ)(y_i − μ)ᵀ).
pub fn cov_conditional(
    prior: &GaussianPrior,
    y: &DMatrix<f64>,
    rows: &[usize],
    mean: &DVector<f64>,
) -> (f64, DMatrix<f64>) {
    let mut scale = prior.scale.clone();
    for &i in rows {
        let r = y.row(i).transpose() - mean;
        scale += &r * r.transpose();
    }
    (prior.df + rows.len() as f64, stats::symmetrize(scale))
}

/// Stored parameters of the two full conditionals used to build importance densities.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub mean_cov: DMatrix<f64>,
    pub df: f64,
    pub scale: DMatrix<f64>,
}

/// Draws (μ_g, Σ_g) for every component: μ_g | Σ_g first, then Σ_g | μ_g.
///
/// Empty components fall back to the prior. Returns the new experts and the
/// conditional moments used for each draw.
pub fn gaussian_conjugate_draw<R: Rng + ?Sized>(
    y: &DMatrix<f64>,
    labels: &[usize],
    current: &[GaussianExpert],
    prior: &GaussianPrior,
    rng: &mut R,
) -> Result<(Vec<GaussianExpert>, Vec<GaussianMoments>)> {
    let g_count = current.len();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); g_count];
    for (i, &z) in labels.iter().enumerate() {
        rows[z].push(i);
    }
    let mut experts = Vec::with_capacity(g_count);
    let mut moments = Vec::with_capacity(g_count);
    for g in 0..g_count {
        let suff = GaussianSuff::from_rows(y, &rows[g]);
        let cov_now = prior.known_cov.as_ref().unwrap_or(current[g].cov());
        let (m, v) = mean_conditional(prior, cov_now, &suff)?;
        let mu = stats::mvn_sample(&m, &v, rng)?;
        let (df, scale) = cov_conditional(prior, y, &rows[g], &mu);
        let sigma = match &prior.known_cov {
            Some(k) => k.clone(),
            None => stats::inv_wishart_sample(df, &scale, rng)?,
        };
        experts.push(GaussianExpert::new(mu, sigma)?);
        moments.push(GaussianMoments {
            mean: m,
            mean_cov: v,
            df,
            scale,
        });
    }
    Ok((experts, moments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::LN_2PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logpdf_matches_analytic_values() {
        let e = GaussianExpert::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!((e.logpdf(&DVector::zeros(2)) + LN_2PI).abs() < 1e-14);
        let e1 = GaussianExpert::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let v = gaussian_logpdf(&DVector::from_element(1, 1.0), &e1).unwrap();
        assert!((v - (-0.5 * LN_2PI - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn logpdf_matches_quadratic_form() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.3, 1.5, 0.2, -0.1, 0.2, 0.9]);
        let mu = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 0.2, 1.1]);
        let e = GaussianExpert::new(mu.clone(), a.clone()).unwrap();
        let inv = a.clone().try_inverse().unwrap();
        let diff = &y - &mu;
        let quad = (diff.transpose() * inv * &diff)[(0, 0)];
        let direct = -0.5 * (3.0 * LN_2PI + a.determinant().ln() + quad);
        assert!((e.logpdf(&y) - direct).abs() < 1e-12);
    }

    #[test]
    fn non_spd_covariance_is_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GaussianExpert::new(DVector::zeros(2), cov),
            Err(MoeError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn unit_weights_give_sample_moments() {
        let y = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 1.0, 0.0, 0.5, 2.0, 4.0]);
        let up = gaussian_mstep(&y, &[1.0; 4]).unwrap();
        assert_eq!(up.ridge, 0.0);
        let mean = DVector::from_vec(vec![1.5, 1.875]);
        assert!((up.expert.mean() - &mean).norm() < 1e-14);
        let mut cov = DMatrix::zeros(2, 2);
        for r in y.row_iter() {
            let d = r.transpose() - &mean;
            cov += &d * d.transpose();
        }
        cov /= 4.0;
        assert!((up.expert.cov() - cov).norm() < 1e-14);
    }

    #[test]
    fn single_point_is_regularized() {
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 5.0, 5.0]);
        let up = gaussian_mstep(&y, &[1.0, 0.0]).unwrap();
        assert!(up.ridge > 0.0);
        assert_eq!(up.expert.mean().as_slice(), &[1.0, 2.0]);
        assert!((up.expert.cov() - DMatrix::identity(2, 2) * up.ridge).norm() < 1e-20);
    }

    #[test]
    fn zero_weight_is_degenerate() {
        let y = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(matches!(
            gaussian_mstep(&y, &[0.0, 0.0]),
            Err(MoeError::DegenerateComponent { .. })
        ));
    }

    #[test]
    fn random_weights_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 30;
        let y = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-3.0..3.0));
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let up = gaussian_mstep(&y, &w).unwrap();
        let tot: f64 = w.iter().sum();
        for a in 0..3 {
            let m: f64 = (0..n).map(|i| w[i] * y[(i, a)]).sum::<f64>() / tot;
            assert!((up.expert.mean()[a] - m).abs() < 1e-10);
            for b in 0..3 {
                let mb: f64 = (0..n).map(|i| w[i] * y[(i, b)]).sum::<f64>() / tot;
                let c: f64 =
                    (0..n).map(|i| w[i] * (y[(i, a)] - m) * (y[(i, b)] - mb)).sum::<f64>() / tot;
                assert!((up.expert.cov()[(a, b)] - c).abs() < 1e-10);
            }
        }
    }

    fn prior(d: usize, mean_scale: f64) -> GaussianPrior {
        GaussianPrior {
            mean: DVector::zeros(d),
            mean_cov: DMatrix::identity(d, d) * mean_scale,
            df: d as f64 + 3.0,
            scale: DMatrix::identity(d, d),
            known_cov: None,
        }
    }

    #[test]
    fn empty_component_posterior_is_prior() {
        let p = prior(2, 4.0);
        let suff = GaussianSuff {
            count: 0,
            sum: DVector::zeros(2),
        };
        let (m, v) = mean_conditional(&p, &DMatrix::identity(2, 2), &suff).unwrap();
        assert_eq!(m, p.mean);
        assert_eq!(v, p.mean_cov);
        let y = DMatrix::zeros(0, 2);
        let (df, s) = cov_conditional(&p, &y, &[], &m);
        assert_eq!(df, p.df);
        assert_eq!(s, p.scale);
    }

    #[test]
    fn flat_prior_posterior_mean_is_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 5000;
        let y = DMatrix::from_fn(n, 2, |_, c| rng.random_range(-1.0..1.0) + c as f64);
        let p = prior(2, 1e8);
        let rows: Vec<usize> = (0..n).collect();
        let suff = GaussianSuff::from_rows(&y, &rows);
        let (m, _) = mean_conditional(&p, &(DMatrix::identity(2, 2) * 0.33), &suff).unwrap();
        assert!((m - suff.ybar()).norm() < 1e-3);
    }

    #[test]
    fn mean_draws_match_conditional_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let y = DMatrix::from_row_slice(6, 1, &[1.0, 1.5, 0.7, 2.0, 1.1, 0.4]);
        let labels = vec![0; 6];
        let mut p = prior(1, 2.0);
        p.known_cov = Some(DMatrix::from_element(1, 1, 0.5));
        let current = vec![GaussianExpert::new(DVector::zeros(1), DMatrix::from_element(1, 1, 0.5)).unwrap()];
        let suff = GaussianSuff::from_rows(&y, &(0..6).collect::<Vec<_>>());
        let (m, v) = mean_conditional(&p, &DMatrix::from_element(1, 1, 0.5), &suff).unwrap();
        let draws: Vec<f64> = (0..10_000)
            .map(|_| gaussian_conjugate_draw(&y, &labels, &current, &p, &mut rng).unwrap().0[0].mean()[0])
            .collect();
        let se = (v[(0, 0)] / draws.len() as f64).sqrt();
        assert!((stats::mean(&draws) - m[0]).abs() < 3.0 * se);
    }
}
