//! Latent style allocation: a two-level latent-variable Gaussian mixture
//! for 2D spatial outcomes.
//!
//! Every receiver owns a distribution over `K` styles, every style owns a
//! distribution over `M` spatial patterns, and every pattern is a bivariate
//! normal whose mean depends on covariates and on receiver and server
//! offsets. Style simplexes over patterns come from an ordered
//! stick-breaking construction, which keeps the styles identifiable.
//!
//! The crate covers the model densities ([`model`]), synthetic data
//! ([`sampler`]), penalized EM fitting ([`inference`]), the comparison
//! models ([`baselines`]), k-fold ELPD model selection ([`selection`]) and
//! every file format ([`io`]). The `lsa` binary wraps them in a CLI.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod error;
pub mod eval;
pub mod inference;
pub mod io;
pub mod math;
pub mod model;
mod optim;
mod par;
pub mod rng;
pub mod sampler;
pub mod selection;

pub use error::{Error, Result};
