use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{MoeError, Result};
use crate::stats::{self, cholesky, normal_logpdf};

/// Gaussian linear-regression expert y ~ N(x̃β_g, σ²_g).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionExpert {
    beta: DVector<f64>,
    sigma2: f64,
}

impl RegressionExpert {
    pub fn new(beta: DVector<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(MoeError::InvalidParameter(format!("error variance {sigma2} must be positive")));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(MoeError::InvalidParameter("non-finite regression coefficient".into()));
        }
        Ok(RegressionExpert { beta, sigma2 })
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn mean_at(&self, x_tilde: &[f64]) -> f64 {
        self.beta.iter().zip(x_tilde).map(|(b, x)| b * x).sum()
    }

    pub fn logpdf(&self, y: f64, x_tilde: &[f64]) -> f64 {
        normal_logpdf(y, self.mean_at(x_tilde), self.sigma2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionUpdate {
    pub expert: RegressionExpert,
    /// Ridge added to XᵀWX when it was numerically singular (0 when none was needed).
    pub ridge: f64,
}

/// Weighted least squares: β = (XᵀWX)⁻¹XᵀWy and σ² = Σ w r² / Σ w.
pub fn regression_mstep(design: &DMatrix<f64>, y: &[f64], weights: &[f64]) -> Result<RegressionUpdate> {
    let n = design.nrows();
    if y.len() != n || weights.len() != n {
        return Err(MoeError::Dimension(format!(
            "{} responses and {} weights for {n} design rows",
            y.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > f64::MIN_POSITIVE) {
        return Err(MoeError::DegenerateComponent {
            component: 0,
            size: total,
        });
    }
    let p = design.ncols();
    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwy = DVector::zeros(p);
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let x = design.row(i).transpose();
        xtwx += &x * x.transpose() * w;
        xtwy += &x * (w * y[i]);
    }
    let mut ridge = 0.0;
    let chol = match cholesky(&xtwx, "weighted normal equations") {
        Ok(c) if c.l_dirty().diagonal().min() > 1e-10 * xtwx.trace().sqrt() => c,
        _ => {
            ridge = 1e-8 * (xtwx.trace() / p as f64).max(1.0);
            loop {
                match cholesky(&(&xtwx + DMatrix::identity(p, p) * ridge), "ridged normal equations") {
                    Ok(c) => break c,
                    Err(_) if ridge < 1e6 => ridge *= 10.0,
                    Err(e) => return Err(e),
                }
            }
        }
    };
    let beta = chol.solve(&xtwy);
    let mut rss = 0.0;
    for i in 0..n {
        let r = y[i] - (design.row(i) * &beta)[0];
        rss += weights[i] * r * r;
    }
    let scale = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let sigma2 = (rss / total).max(1e-12 * scale.max(1.0));
    Ok(RegressionUpdate {
        expert: RegressionExpert::new(beta, sigma2)?,
        ridge,
    })
}

/// Prior β ~ N(b₀, B₀), σ² ~ IG(c₀, C₀) (shape, scale).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionPrior {
    pub coef_mean: DVector<f64>,
    pub coef_cov: DMatrix<f64>,
    pub shape: f64,
    pub scale: f64,
}

impl RegressionPrior {
    /// β ~ N(0, 100·I), σ² ~ IG(2.5, 1.25·s²_y).
    pub fn default_for(p: usize, y: &[f64]) -> Self {
        let s2 = stats::variance(y);
        let s2 = if s2.is_finite() && s2 > 0.0 { s2 } else { 1.0 };
        RegressionPrior {
            coef_mean: DVector::zeros(p),
            coef_cov: DMatrix::identity(p, p) * 100.0,
            shape: 2.5,
            scale: 1.25 * s2,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.coef_mean.len() != p || self.coef_cov.nrows() != p {
            return Err(MoeError::Dimension(format!("regression prior needs {p} coefficients")));
        }
        cholesky(&self.coef_cov, "regression prior covariance")?;
        if !(self.shape > 0.0 && self.scale > 0.0) {
            return Err(MoeError::InvalidParameter("inverse-gamma prior needs positive shape and scale".into()));
        }
        Ok(())
    }
}

/// Full conditional of β given σ²: N(b_n, B_n), B_n = (B₀⁻¹ + XᵀX/σ²)⁻¹, b_n = B_n(B₀⁻¹b₀ + Xᵀy/σ²).
pub fn coef_conditional(
    prior: &RegressionPrior,
    design: &DMatrix<f64>,
    y: &[f64],
    rows: &[usize],
    sigma2: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = design.ncols();
    let prior_prec = cholesky(&prior.coef_cov, "regression prior covariance")?.inverse();
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for &i in rows {
        let x = design.row(i).transpose();
        xtx += &x * x.transpose();
        xty += &x * y[i];
    }
    let post_prec = &prior_prec + xtx / sigma2;
    let post_cov = stats::symmetrize(cholesky(&post_prec, "regression posterior precision")?.inverse());
    let post_mean = &post_cov * (&prior_prec * &prior.coef_mean + xty / sigma2);
    Ok((post_mean, post_cov))
}

/// Full conditional of σ² given β: IG(c₀ + n_g/2, C₀ + ½ Σ (y_i − x̃_iβ)²).
pub fn variance_conditional(
    prior: &RegressionPrior,
    design: &DMatrix<f64>,
    y: &[f64],
    rows: &[usize],
    beta: &DVector<f64>,
) -> (f64, f64) {
    let rss: f64 = rows
        .iter()
        .map(|&i| {
            let r = y[i] - (design.row(i) * beta)[0];
            r * r
        })
        .sum();
    (prior.shape + rows.len() as f64 / 2.0, prior.scale + rss / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionMoments {
    pub coef_mean: DVector<f64>,
    pub coef_cov: DMatrix<f64>,
    pub shape: f64,
    pub scale: f64,
}

/// Draws β_g | σ²_g then σ²_g | β_g for every component.
pub fn regression_conjugate_draw<R: Rng + ?Sized>(
    design: &DMatrix<f64>,
    y: &[f64],
    labels: &[usize],
    current: &[RegressionExpert],
    prior: &RegressionPrior,
    rng: &mut R,
) -> Result<(Vec<RegressionExpert>, Vec<RegressionMoments>)> {
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); current.len()];
    for (i, &z) in labels.iter().enumerate() {
        rows[z].push(i);
    }
    let mut experts = Vec::with_capacity(current.len());
    let mut moments = Vec::with_capacity(current.len());
    for (g, cur) in current.iter().enumerate() {
        let (m, v) = coef_conditional(prior, design, y, &rows[g], cur.sigma2())?;
        let beta = stats::mvn_sample(&m, &v, rng)?;
        let (shape, scale) = variance_conditional(prior, design, y, &rows[g], &beta);
        let sigma2 = stats::inv_gamma_sample(shape, scale, rng);
        experts.push(RegressionExpert::new(beta, sigma2)?);
        moments.push(RegressionMoments {
            coef_mean: m,
            coef_cov: v,
            shape,
            scale,
        });
    }
    Ok((experts, moments))
}
