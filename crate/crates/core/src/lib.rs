//! Reconstruction of Gaussian conditional-independence networks from p
//! simultaneous Bayesian regressions, with an optional prior network whose
//! relevance is estimated from the data by global empirical Bayes.
//!
//! Modules, bottom-up:
//! - [`graph`]: benchmark precision matrices, GGM sampling, adjacency utilities
//! - [`vb`]: variational posterior of each regression equation and the network fit
//! - [`eb`]: empirical Bayes estimation of the coefficient-precision priors
//! - [`gibbs`]: Gibbs sampler for a single equation, used to check the VB marginals
//! - [`selection`]: edge scores, AND-rule symmetrisation, ROC and split-half reproducibility
//! - [`io`] and [`cli`]: file formats and the `semnet` command line

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod eb;
pub mod error;
pub mod gibbs;
pub mod graph;
pub mod io;
pub mod selection;
pub mod special;
pub mod vb;

pub use error::{Error, Result};
