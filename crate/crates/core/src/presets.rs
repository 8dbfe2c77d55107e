//! Simulation setups used by the examples and experiments.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MoeError, Result};
use crate::experts::{simulate, BinomialExpert, Experts, GaussianExpert, RegressionExpert, SimOptions};
use crate::model::{Allocation, Dataset, Gating, MeModel, Variant, Weights};

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Two bivariate Gaussians, weights driven by a binary covariate.
    GaussianGating,
    /// Two binomials with T = 2 (generically unidentified).
    BinomialT2,
    /// Two binomials with T = 5.
    BinomialT5,
    /// Two regression lines observed at d ∈ {0, 1}.
    RegressionDesign1,
    /// Two regression lines observed at d ∈ {0, 1, 2}.
    RegressionDesign2,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::GaussianGating,
        Preset::BinomialT2,
        Preset::BinomialT5,
        Preset::RegressionDesign1,
        Preset::RegressionDesign2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::GaussianGating => "gaussian-gating",
            Preset::BinomialT2 => "binomial-t2",
            Preset::BinomialT5 => "binomial-t5",
            Preset::RegressionDesign1 => "regression-design1",
            Preset::RegressionDesign2 => "regression-design2",
        }
    }

    pub fn from_name(s: &str) -> Option<Preset> {
        Preset::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s))
    }

    pub fn default_n(self) -> usize {
        match self {
            Preset::GaussianGating => 200,
            Preset::BinomialT2 => 250,
            Preset::BinomialT5 | Preset::RegressionDesign1 | Preset::RegressionDesign2 => 100,
        }
    }

    /// Name of the covariate column, if any.
    pub fn covariate_name(self) -> Option<&'static str> {
        match self {
            Preset::GaussianGating => Some("x"),
            Preset::RegressionDesign1 | Preset::RegressionDesign2 => Some("d"),
            Preset::BinomialT2 | Preset::BinomialT5 => None,
        }
    }

    /// Balanced covariate column for `n` observations (n × 0 when there is none).
    pub fn covariates(self, n: usize) -> DMatrix<f64> {
        match self {
            Preset::GaussianGating | Preset::RegressionDesign1 => DMatrix::from_fn(n, 1, |i, _| (i % 2) as f64),
            Preset::RegressionDesign2 => DMatrix::from_fn(n, 1, |i, _| (i % 3) as f64),
            Preset::BinomialT2 | Preset::BinomialT5 => DMatrix::zeros(n, 0),
        }
    }

    pub fn truth(self) -> Result<MeModel> {
        match self {
            Preset::GaussianGating => {
                // gating odds 23:75 for x = 0 and 85:17 for x = 1
                let g0 = (23.0f64 / 75.0).ln();
                let g1 = (85.0f64 / 17.0).ln() - g0;
                let gating = Gating::from_free_rows(&DMatrix::from_row_slice(1, 2, &[g0, g1]))?;
                let e1 = GaussianExpert::new(
                    DVector::from_vec(vec![0.0, 0.0]),
                    DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]),
                )?;
                let e2 = GaussianExpert::new(
                    DVector::from_vec(vec![3.0, 2.5]),
                    DMatrix::from_row_slice(2, 2, &[1.2, -0.4, -0.4, 0.8]),
                )?;
                MeModel::new(Variant::C, Weights::Gating(gating), Experts::Gaussian(vec![e1, e2]))
            }
            Preset::BinomialT2 | Preset::BinomialT5 => {
                let t = if self == Preset::BinomialT2 { 2 } else { 5 };
                let experts = vec![
                    BinomialExpert::new(t, logistic(-1.0))?,
                    BinomialExpert::new(t, logistic(1.5))?,
                ];
                MeModel::new(Variant::A, Weights::uniform(2), Experts::Binomial(experts))
            }
            Preset::RegressionDesign1 | Preset::RegressionDesign2 => {
                let experts = vec![
                    RegressionExpert::new(DVector::from_vec(vec![2.0, 2.0]), 0.1)?,
                    RegressionExpert::new(DVector::from_vec(vec![1.0, -2.0]), 0.1)?,
                ];
                MeModel::new(Variant::B, Weights::uniform(2), Experts::Regression(experts))
            }
        }
    }

    pub fn simulate(self, n: usize, seed: u64) -> Result<(Dataset, Allocation)> {
        if n == 0 {
            return Err(MoeError::InvalidParameter("need at least one observation".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        simulate(&self.truth()?, &self.covariates(n), SimOptions::default(), &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Outcomes;

    #[test]
    fn presets_simulate_deterministically() {
        for p in Preset::ALL {
            let (a, za) = p.simulate(p.default_n(), 7).unwrap();
            let (b, zb) = p.simulate(p.default_n(), 7).unwrap();
            assert_eq!(a, b);
            assert_eq!(za, zb);
            assert_eq!(a.n(), p.default_n());
            assert_eq!(Preset::from_name(p.name()), Some(p));
        }
    }

    #[test]
    fn gating_truth_reproduces_the_odds() {
        let m = Preset::GaussianGating.truth().unwrap();
        let g = m.gating().unwrap();
        let p0 = crate::model::gating_probs(g, &[1.0, 0.0]).unwrap();
        let p1 = crate::model::gating_probs(g, &[1.0, 1.0]).unwrap();
        assert!((p0[1] / p0[0] - 23.0 / 75.0).abs() < 1e-12);
        assert!((p1[1] / p1[0] - 85.0 / 17.0).abs() < 1e-12);
        assert!((g.coef()[(1, 1)] - 2.79).abs() < 0.005);
    }

    #[test]
    fn binomial_presets_record_trials() {
        let (d, _) = Preset::BinomialT5.simulate(100, 1).unwrap();
        assert!(matches!(d.outcomes(), Outcomes::Binomial { trials: 5, .. }));
    }
}
