//! Zero-mean normal scale mixture approximating the standard logistic density.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{MoeError, Result};

pub const MIXTURE_COMPONENTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMixture {
    pub weights: [f64; MIXTURE_COMPONENTS],
    pub variances: [f64; MIXTURE_COMPONENTS],
    /// max |logistic(x) − mixture(x)| over [−15, 15].
    pub max_density_error: f64,
    /// KL(logistic ‖ mixture) evaluated on the fitting grid.
    pub kl: f64,
}

impl ScaleMixture {
    pub fn density(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.variances)
            .map(|(w, v)| w * (-0.5 * x * x / v).exp() / (2.0 * PI * v).sqrt())
            .sum()
    }

    pub fn variance(&self) -> f64 {
        self.weights.iter().zip(&self.variances).map(|(w, v)| w * v).sum()
    }
}

pub fn logistic_density(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

const GRID_STEP: f64 = 0.005;
const GRID_MAX: f64 = 60.0;

/// Minimizes KL(logistic ‖ mixture) over weights and variances by EM on a fine
/// quadrature grid (the logistic mass acts as fixed observation weights).
pub fn fit_logistic_scale_mixture() -> Result<ScaleMixture> {
    // symmetric integrand: midpoint grid on (0, GRID_MAX]
    let n = (GRID_MAX / GRID_STEP) as usize;
    let xs: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) * GRID_STEP).collect();
    let mass: Vec<f64> = xs.iter().map(|&x| 2.0 * logistic_density(x) * GRID_STEP).collect();
    let total: f64 = mass.iter().sum();
    let mass: Vec<f64> = mass.iter().map(|m| m / total).collect();
    let x2: Vec<f64> = xs.iter().map(|x| x * x).collect();

    let mut w = [1.0 / MIXTURE_COMPONENTS as f64; MIXTURE_COMPONENTS];
    let mut v = [0.0; MIXTURE_COMPONENTS];
    for (r, s) in v.iter_mut().enumerate() {
        *s = 0.3 * (40.0f64).powf(r as f64 / (MIXTURE_COMPONENTS - 1) as f64);
    }
    let mut prev = f64::NEG_INFINITY;
    let mut dens = vec![0.0; MIXTURE_COMPONENTS];
    for _ in 0..2_000 {
        let mut sw = [0.0; MIXTURE_COMPONENTS];
        let mut sx = [0.0; MIXTURE_COMPONENTS];
        let mut obj = 0.0;
        let norm: Vec<f64> = v.iter().zip(&w).map(|(s, wr)| wr / (2.0 * PI * s).sqrt()).collect();
        for k in 0..n {
            let mut tot = 0.0;
            for r in 0..MIXTURE_COMPONENTS {
                dens[r] = norm[r] * (-0.5 * x2[k] / v[r]).exp();
                tot += dens[r];
            }
            if tot <= 0.0 {
                continue;
            }
            obj += mass[k] * tot.ln();
            for r in 0..MIXTURE_COMPONENTS {
                let p = mass[k] * dens[r] / tot;
                sw[r] += p;
                sx[r] += p * x2[k];
            }
        }
        for r in 0..MIXTURE_COMPONENTS {
            if sw[r] > 0.0 {
                w[r] = sw[r];
                v[r] = sx[r] / sw[r];
            }
        }
        let done = (obj - prev).abs() < 1e-13;
        prev = obj;
        if done {
            break;
        }
    }
    let entropy: f64 = xs
        .iter()
        .zip(&mass)
        .map(|(&x, &m)| m * logistic_density(x).ln())
        .sum();
    let mut order: Vec<usize> = (0..MIXTURE_COMPONENTS).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut fit = ScaleMixture {
        weights: order.map_to(|r| w[r]),
        variances: order.map_to(|r| v[r]),
        max_density_error: 0.0,
        kl: entropy - prev,
    };
    fit.max_density_error = (0..=30_000)
        .map(|k| -15.0 + k as f64 * 1e-3)
        .map(|x| (logistic_density(x) - fit.density(x)).abs())
        .fold(0.0, f64::max);
    if !fit.weights.iter().chain(&fit.variances).all(|x| x.is_finite() && *x > 0.0) {
        return Err(MoeError::Numerical("scale-mixture fit produced invalid parameters".into()));
    }
    Ok(fit)
}

trait MapTo {
    fn map_to(&self, f: impl Fn(usize) -> f64) -> [f64; MIXTURE_COMPONENTS];
}

impl MapTo for Vec<usize> {
    fn map_to(&self, f: impl Fn(usize) -> f64) -> [f64; MIXTURE_COMPONENTS] {
        let mut out = [0.0; MIXTURE_COMPONENTS];
        for (o, &r) in out.iter_mut().zip(self) {
            *o = f(r);
        }
        out
    }
}

static TABLE: OnceLock<ScaleMixture> = OnceLock::new();

/// The fitted table, computed once per process.
pub fn logistic_scale_mixture() -> &'static ScaleMixture {
    TABLE.get_or_init(|| fit_logistic_scale_mixture().expect("logistic scale-mixture fit"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_quality() {
        let m = logistic_scale_mixture();
        assert!(m.max_density_error <= 1e-3, "max error {}", m.max_density_error);
        assert!((m.variance() - PI * PI / 3.0).abs() < 1e-3, "variance {}", m.variance());
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // normalization by trapezoid quadrature on [−60, 60]
        let h = 1e-3;
        let integral: f64 = (0..=120_000).map(|k| {
            let x = -60.0 + k as f64 * h;
            let c = if k == 0 || k == 120_000 { 0.5 } else { 1.0 };
            c * m.density(x) * h
        }).sum();
        assert!((integral - 1.0).abs() < 1e-8);
    }
}
