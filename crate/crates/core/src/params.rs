//! Flat vector view of the free parameters of a model, used for standard
//! errors and for counting parameters in information criteria.
//!
//! Simplex-constrained blocks drop their first coordinate (weights η_2..η_G,
//! support p_2..p_M, transition rows ξ_{j,2..K}); the gating baseline row is
//! omitted; covariance matrices contribute their lower triangle.

use nalgebra::{DMatrix, DVector};

use crate::error::{MoeError, Result};
use crate::experts::{
    BinomialExpert, Experts, GaussianExpert, MarkovExpert, PlSupport, PlackettLuceExpert, RegressionExpert,
};
use crate::model::{Gating, MeModel, Weights};

pub fn param_names(model: &MeModel) -> Vec<String> {
    let mut names = Vec::new();
    match model.weights() {
        Weights::Fixed(eta) => {
            for g in 1..eta.len() {
                names.push(format!("eta[{}]", g + 1));
            }
        }
        Weights::Gating(gt) => {
            for g in 1..gt.components() {
                for k in 0..gt.n_coef() {
                    names.push(format!("gamma[{},{}]", g + 1, k));
                }
            }
        }
    }
    for g in 0..model.components() {
        let c = g + 1;
        match model.experts() {
            Experts::Gaussian(v) => {
                let d = v[g].dim();
                for a in 0..d {
                    names.push(format!("mu[{c}][{}]", a + 1));
                }
                for a in 0..d {
                    for b in 0..=a {
                        names.push(format!("sigma[{c}][{},{}]", a + 1, b + 1));
                    }
                }
            }
            Experts::Regression(v) => {
                for k in 0..v[g].beta().len() {
                    names.push(format!("beta[{c}][{k}]"));
                }
                names.push(format!("sigma2[{c}]"));
            }
            Experts::Binomial(_) => names.push(format!("pi[{c}]")),
            Experts::PlackettLuce(v) => match v[g].support() {
                PlSupport::Fixed(p) => {
                    for j in 1..p.len() {
                        names.push(format!("p[{c}][{}]", j + 1));
                    }
                }
                PlSupport::Linked(b) => {
                    for j in 1..b.nrows() {
                        for k in 0..b.ncols() {
                            names.push(format!("beta[{c}][{},{k}]", j + 1));
                        }
                    }
                }
            },
            Experts::Markov(v) => {
                let xi = v[g].xi();
                for j in 0..xi.nrows() {
                    for k in 1..xi.ncols() {
                        names.push(format!("xi[{c}][{},{}]", j + 1, k + 1));
                    }
                }
            }
        }
    }
    names
}

pub fn to_vector(model: &MeModel) -> DVector<f64> {
    let mut v = Vec::new();
    match model.weights() {
        Weights::Fixed(eta) => v.extend(eta.iter().skip(1)),
        Weights::Gating(gt) => {
            for g in 1..gt.components() {
                v.extend(gt.coef().row(g).iter());
            }
        }
    }
    for g in 0..model.components() {
        match model.experts() {
            Experts::Gaussian(e) => {
                v.extend(e[g].mean().iter());
                let s = e[g].cov();
                for a in 0..s.nrows() {
                    for b in 0..=a {
                        v.push(s[(a, b)]);
                    }
                }
            }
            Experts::Regression(e) => {
                v.extend(e[g].beta().iter());
                v.push(e[g].sigma2());
            }
            Experts::Binomial(e) => v.push(e[g].prob()),
            Experts::PlackettLuce(e) => match e[g].support() {
                PlSupport::Fixed(p) => v.extend(p.iter().skip(1)),
                PlSupport::Linked(b) => {
                    for j in 1..b.nrows() {
                        v.extend(b.row(j).iter());
                    }
                }
            },
            Experts::Markov(e) => {
                let xi = e[g].xi();
                for j in 0..xi.nrows() {
                    v.extend(xi.row(j).iter().skip(1));
                }
            }
        }
    }
    DVector::from_vec(v)
}

/// Number of free parameters (the length of `to_vector`).
pub fn free_parameter_count(model: &MeModel) -> usize {
    to_vector(model).len()
}

/// Rebuilds a model of the same shape as `template` from a parameter vector.
pub fn from_vector(template: &MeModel, theta: &DVector<f64>) -> Result<MeModel> {
    let expected = free_parameter_count(template);
    if theta.len() != expected {
        return Err(MoeError::Dimension(format!(
            "{} parameters supplied, model has {expected}",
            theta.len()
        )));
    }
    let mut pos = 0;
    let mut take = |k: usize| -> &[f64] {
        let s = &theta.as_slice()[pos..pos + k];
        pos += k;
        s
    };
    let g_count = template.components();
    let weights = match template.weights() {
        Weights::Fixed(_) => {
            let rest = take(g_count - 1);
            let first = 1.0 - rest.iter().sum::<f64>();
            let mut eta = vec![first];
            eta.extend_from_slice(rest);
            Weights::Fixed(DVector::from_vec(eta))
        }
        Weights::Gating(gt) => {
            let p = gt.n_coef();
            let mut coef = DMatrix::zeros(g_count, p);
            for g in 1..g_count {
                let row = take(p);
                for k in 0..p {
                    coef[(g, k)] = row[k];
                }
            }
            Weights::Gating(Gating::new(coef)?)
        }
    };
    let experts = match template.experts() {
        Experts::Gaussian(v) => {
            let mut out = Vec::with_capacity(g_count);
            for e in v {
                let d = e.dim();
                let mean = DVector::from_column_slice(take(d));
                let tri = take(d * (d + 1) / 2);
                let mut cov = DMatrix::zeros(d, d);
                let mut t = 0;
                for a in 0..d {
                    for b in 0..=a {
                        cov[(a, b)] = tri[t];
                        cov[(b, a)] = tri[t];
                        t += 1;
                    }
                }
                out.push(GaussianExpert::new(mean, cov)?);
            }
            Experts::Gaussian(out)
        }
        Experts::Regression(v) => {
            let mut out = Vec::with_capacity(g_count);
            for e in v {
                let beta = DVector::from_column_slice(take(e.beta().len()));
                let s2 = take(1)[0];
                out.push(RegressionExpert::new(beta, s2)?);
            }
            Experts::Regression(out)
        }
        Experts::Binomial(v) => Experts::Binomial(
            v.iter()
                .map(|e| BinomialExpert::new(e.trials(), take(1)[0]))
                .collect::<Result<Vec<_>>>()?,
        ),
        Experts::PlackettLuce(v) => {
            let mut out = Vec::with_capacity(g_count);
            for e in v {
                match e.support() {
                    PlSupport::Fixed(p) => {
                        let rest = take(p.len() - 1);
                        let mut s = vec![1.0 - rest.iter().sum::<f64>()];
                        s.extend_from_slice(rest);
                        out.push(PlackettLuceExpert::new(DVector::from_vec(s))?);
                    }
                    PlSupport::Linked(b) => {
                        let mut coef = DMatrix::zeros(b.nrows(), b.ncols());
                        for j in 1..b.nrows() {
                            let row = take(b.ncols());
                            for k in 0..b.ncols() {
                                coef[(j, k)] = row[k];
                            }
                        }
                        out.push(PlackettLuceExpert::linked(coef)?);
                    }
                }
            }
            Experts::PlackettLuce(out)
        }
        Experts::Markov(v) => {
            let mut out = Vec::with_capacity(g_count);
            for e in v {
                let (j_rows, k) = e.xi().shape();
                let mut xi = DMatrix::zeros(j_rows, k);
                for j in 0..j_rows {
                    let rest = take(k - 1);
                    xi[(j, 0)] = 1.0 - rest.iter().sum::<f64>();
                    for c in 1..k {
                        xi[(j, c)] = rest[c - 1];
                    }
                }
                out.push(MarkovExpert::new(e.history(), xi)?);
            }
            Experts::Markov(out)
        }
    };
    MeModel::new(template.variant(), weights, experts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::History;
    use crate::model::Variant;

    fn gating(g: usize, p: usize) -> Weights {
        Weights::Gating(Gating::zeros(g, p))
    }

    #[test]
    fn counts_match_hand_table() {
        let gauss = |d: usize| GaussianExpert::new(DVector::zeros(d), DMatrix::identity(d, d)).unwrap();
        let reg = |p: usize| RegressionExpert::new(DVector::zeros(p), 1.0).unwrap();
        let pl = PlackettLuceExpert::new(DVector::from_element(4, 0.25)).unwrap();
        let pl_linked = PlackettLuceExpert::linked(DMatrix::zeros(4, 3)).unwrap();
        let mk = |h: History| MarkovExpert::uniform(h, 3, 4);
        let bin = BinomialExpert::new(5, 0.5).unwrap();
        // (model, hand count)
        let cases: Vec<(MeModel, usize)> = vec![
            // G=1, d=1 Gaussian: mean + variance
            (MeModel::new(Variant::A, Weights::uniform(1), Experts::Gaussian(vec![gauss(1)])).unwrap(), 2),
            // G=2, d=2 mixture: 1 weight + 2·(2 + 3)
            (MeModel::new(Variant::A, Weights::uniform(2), Experts::Gaussian(vec![gauss(2); 2])).unwrap(), 11),
            // G=2, d=2 simple ME, q=1: 2 gating + 2·5
            (MeModel::new(Variant::C, gating(2, 2), Experts::Gaussian(vec![gauss(2); 2])).unwrap(), 12),
            // G=3 mixture of regressions, q=2: 2 weights + 3·(3 + 1)
            (MeModel::new(Variant::B, Weights::uniform(3), Experts::Regression(vec![reg(3); 3])).unwrap(), 14),
            // G=2 standard ME, q=1: 2 gating + 2·(2 + 1)
            (MeModel::new(Variant::D, gating(2, 2), Experts::Regression(vec![reg(2); 2])).unwrap(), 8),
            // G=2 binomial mixture: 1 + 2
            (MeModel::new(Variant::A, Weights::uniform(2), Experts::Binomial(vec![bin.clone(); 2])).unwrap(), 3),
            // G=3 binomial simple ME, q=2: 2·3 + 3
            (MeModel::new(Variant::C, gating(3, 3), Experts::Binomial(vec![bin; 3])).unwrap(), 9),
            // G=2 Plackett-Luce, M=4: 1 + 2·3
            (MeModel::new(Variant::A, Weights::uniform(2), Experts::PlackettLuce(vec![pl.clone(); 2])).unwrap(), 7),
            // G=2 Plackett-Luce simple ME, q=2: 3 + 2·3
            (MeModel::new(Variant::C, gating(2, 3), Experts::PlackettLuce(vec![pl; 2])).unwrap(), 9),
            // G=2 covariate-linked Plackett-Luce, q=2: 1 + 2·(3·3)
            (MeModel::new(Variant::B, Weights::uniform(2), Experts::PlackettLuce(vec![pl_linked; 2])).unwrap(), 19),
            // Markov, K=3: J rows of 2 free probabilities
            (MeModel::new(Variant::A, Weights::uniform(2), Experts::Markov(vec![mk(History::PrevState); 2])).unwrap(), 1 + 2 * 6),
            (MeModel::new(Variant::B, Weights::uniform(2), Experts::Markov(vec![mk(History::PrevStateCovariate { column: 0 }); 2])).unwrap(), 1 + 2 * 12),
            (MeModel::new(Variant::A, Weights::uniform(3), Experts::Markov(vec![mk(History::PrevStateTime); 3])).unwrap(), 2 + 3 * 24),
            (MeModel::new(Variant::D, gating(2, 2), Experts::Markov(vec![mk(History::PrevStateTimeCovariate { column: 0 }); 2])).unwrap(), 2 + 2 * 48),
        ];
        for (i, (m, k)) in cases.iter().enumerate() {
            assert_eq!(free_parameter_count(m), *k, "case {i}");
            assert_eq!(param_names(m).len(), *k, "names {i}");
            let back = from_vector(m, &to_vector(m)).unwrap();
            assert!((to_vector(&back) - to_vector(m)).amax() < 1e-15, "round trip {i}");
        }
    }
}
