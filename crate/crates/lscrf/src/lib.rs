//! Regression-based training of pairwise conditional random fields on
//! attributed graphs.
//!
//! Instead of likelihood optimization with repeated inference, training
//! reduces to one independent regression problem per label pair: each edge
//! of each annotated graph contributes its feature vector with an indicator
//! target, and the fitted regressors are turned into energy tables at
//! prediction time by taking negative logs. The crate bundles
//!
//! - the graph/energy data model and the closed-form maximum-likelihood
//!   estimator for forest-structured models ([`graph`]),
//! - exact and approximate MAP inference plus samplers ([`inference`]),
//! - closed-form, iterative, and boosted-tree regressors ([`regress`]),
//! - the per-label-pair training pipeline ([`train`]) and the energy
//!   composition rules for tree-shaped and loopy graphs ([`energy`]),
//! - classical conditional-likelihood baselines ([`baselines`]),
//! - corpus I/O, synthetic generators, and evaluation ([`data`]),
//! - a batch CLI ([`cli`]).
//!
//! The runnable examples under `examples/` walk through each capability;
//! see the repository README for an overview.

pub mod baselines;
pub mod cli;
pub mod data;
pub mod energy;
pub mod error;
pub mod graph;
pub mod inference;
pub mod model_file;
pub mod regress;
pub mod train;

pub use error::{Error, Result};
pub use graph::{
    empirical_marginals, exact_partition, tree_ml_params, EnergyFunction, Graph, Instance,
    LabelSet, Labeling, MarginalTables,
};
pub use inference::{
    exact_map, gibbs_sample, icm, tree_log_partition, tree_map, tree_marginals, tree_sample,
    trws_map, GibbsOptions, InferenceResult, TrwsOptions,
};
