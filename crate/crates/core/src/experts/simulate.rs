use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{MoeError, Result};
use crate::experts::Experts;
use crate::model::{Allocation, Dataset, MeModel, Outcomes, Weights};
use crate::stats;

/// Family-specific shape settings for simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Ballot length for rankings (full rankings when `None`).
    pub ballot_len: Option<usize>,
    /// Number of transitions T for categorical series whose history does not fix it.
    pub transitions: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            ballot_len: None,
            transitions: 4,
        }
    }
}

/// Draws z_i from the weights (or gating at x̃_i), then y_i from component z_i.
///
/// One observation is simulated per covariate row. Categorical series start
/// from a uniformly drawn state.
pub fn simulate<R: Rng + ?Sized>(
    model: &MeModel,
    covariates: &DMatrix<f64>,
    opts: SimOptions,
    rng: &mut R,
) -> Result<(Dataset, Allocation)> {
    let n = covariates.nrows();
    let g_count = model.components();
    let mut design = DMatrix::from_element(n, covariates.ncols() + 1, 1.0);
    design.view_mut((0, 1), (n, covariates.ncols())).copy_from(covariates);
    if let Weights::Gating(g) = model.weights() {
        if g.n_coef() != design.ncols() {
            return Err(MoeError::Dimension(format!(
                "gating expects {} design columns, covariates give {}",
                g.n_coef(),
                design.ncols()
            )));
        }
    }
    let logw = model.weights().log_matrix(&design)?;
    let labels: Vec<usize> = (0..n)
        .map(|i| {
            let probs: Vec<f64> = logw.row(i).iter().map(|v| v.exp()).collect();
            stats::sample_categorical(&probs, rng)
        })
        .collect();
    let outcomes = match model.experts() {
        Experts::Gaussian(v) => {
            let d = v[0].dim();
            let mut y = DMatrix::zeros(n, d);
            for (i, &z) in labels.iter().enumerate() {
                y.set_row(i, &v[z].sample(rng).transpose());
            }
            Outcomes::Continuous(y)
        }
        Experts::Regression(v) => {
            if v[0].beta().len() != design.ncols() {
                return Err(MoeError::Dimension("regression coefficients do not match the design".into()));
            }
            let mut y = DMatrix::zeros(n, 1);
            for (i, &z) in labels.iter().enumerate() {
                let x: Vec<f64> = design.row(i).iter().copied().collect();
                let e: f64 = rng.sample(rand_distr::StandardNormal);
                y[(i, 0)] = v[z].mean_at(&x) + v[z].sigma2().sqrt() * e;
            }
            Outcomes::Continuous(y)
        }
        Experts::Binomial(v) => Outcomes::Binomial {
            counts: labels.iter().map(|&z| v[z].sample(rng)).collect(),
            trials: v[0].trials(),
        },
        Experts::PlackettLuce(v) => {
            let m = v[0].n_items();
            let len = opts.ballot_len.unwrap_or(m).clamp(1, m);
            let ballots = labels
                .iter()
                .enumerate()
                .map(|(i, &z)| {
                    let x: Vec<f64> = design.row(i).iter().copied().collect();
                    v[z].sample(len, &x, rng)
                })
                .collect();
            Outcomes::Rankings { ballots, n_items: m }
        }
        Experts::Markov(v) => {
            let k = v[0].n_states();
            let t = v[0].transitions().unwrap_or(opts.transitions);
            let series = labels
                .iter()
                .enumerate()
                .map(|(i, &z)| {
                    let cov = v[z].history().covariate_column().map(|c| covariates[(i, c)]);
                    let start = rng.random_range(0..k);
                    v[z].sample(start, t, cov, rng)
                })
                .collect::<Result<Vec<_>>>()?;
            Outcomes::Categorical { series, n_states: k }
        }
    };
    let data = Dataset::new(outcomes, covariates.clone())?;
    model.check_data(&data)?;
    Ok((data, Allocation::new(labels, g_count)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::{BinomialExpert, GaussianExpert, RegressionExpert};
    use crate::model::Variant;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_component_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = GaussianExpert::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let model = MeModel::new(Variant::A, Weights::uniform(1), Experts::Gaussian(vec![e])).unwrap();
        let (data, z) = simulate(&model, &DMatrix::zeros(30, 0), SimOptions::default(), &mut rng).unwrap();
        assert_eq!(data.n(), 30);
        assert!(z.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn regression_group_means_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let n = 100;
        let x = DMatrix::from_fn(n, 1, |i, _| (i % 2) as f64);
        let experts = Experts::Regression(vec![
            RegressionExpert::new(DVector::from_vec(vec![2.0, 2.0]), 0.1).unwrap(),
            RegressionExpert::new(DVector::from_vec(vec![1.0, -2.0]), 0.1).unwrap(),
        ]);
        let model = MeModel::new(Variant::B, Weights::uniform(2), experts).unwrap();
        let (data, z) = simulate(&model, &x, SimOptions::default(), &mut rng).unwrap();
        let y = data.continuous().unwrap();
        for (g, target) in [(0usize, 2.0), (1, 1.0)] {
            let vals: Vec<f64> = (0..n)
                .filter(|&i| x[(i, 0)] == 0.0 && z.labels()[i] == g)
                .map(|i| y[(i, 0)])
                .collect();
            let tol = 3.0 * (0.1f64 / vals.len() as f64).sqrt();
            assert!((stats::mean(&vals) - target).abs() < tol);
        }
    }

    #[test]
    fn binomial_counts_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p1 = 1.0 / (1.0 + 1f64.exp());
        let p2 = 1.0 / (1.0 + (-1.5f64).exp());
        assert!((p1 - 0.2689).abs() < 1e-4 && (p2 - 0.8176).abs() < 1e-4);
        let experts = Experts::Binomial(vec![
            BinomialExpert::new(5, p1).unwrap(),
            BinomialExpert::new(5, p2).unwrap(),
        ]);
        let model = MeModel::new(Variant::A, Weights::uniform(2), experts).unwrap();
        let (data, _) = simulate(&model, &DMatrix::zeros(100, 0), SimOptions::default(), &mut rng).unwrap();
        let Outcomes::Binomial { counts, trials } = data.outcomes() else { panic!() };
        assert_eq!(*trials, 5);
        assert!(counts.iter().all(|&c| c <= 5));
    }
}
