//! Mixture-of-experts estimation: the four-variant model taxonomy over five
//! expert families, EM/ECM and MCMC estimation, model selection, and
//! identifiability diagnostics.

pub mod cluster;
pub mod em;
pub mod identifiability;
pub mod error;
pub mod experts;
pub mod logit;
pub mod lp;
pub mod mcmc;
pub mod model;
pub mod modelsel;
pub mod params;
pub mod presets;
pub mod stats;

pub use error::{MoeError, Result};
pub use model::{
    gating_probs, joint_density, log_joint, log_likelihood, relabel_gating, Allocation, Dataset, Family,
    Gating, MeModel, Outcomes, Permutation, Variant, Weights,
};
