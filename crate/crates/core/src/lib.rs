//! Proximal Langevin samplers for log-concave models with non-smooth priors.
//!
//! Two Markov kernels target the Moreau-Yosida regularised density
//! `pi^lambda`: the Euler-Maruyama based MYULA kernel and the stabilised
//! Runge-Kutta-Chebyshev SK-ROCK kernel, which spends `s` gradient evaluations
//! per step and in exchange tolerates steps `O(s^2)` larger.
//!
//! Besides the kernels the crate provides the proximal operators and forward
//! models used for imaging posteriors, closed-form analysis of both kernels on
//! Gaussian targets, chain diagnostics and the `skrock` experiment driver.

pub mod analysis;
pub mod chebyshev;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod models;
pub mod operators;
pub mod par;
pub mod prox;
pub mod samplers;

pub use error::{Error, Result};
