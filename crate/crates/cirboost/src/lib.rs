//! Weak approximation of the CIR and Heston models with random-grid boosting.
//!
//! A second-order one-step scheme run on a coarse grid and on randomly
//! refined grids, with weighted differences, yields fourth- and sixth-order
//! estimators of `E[f(X_T)]`.

pub mod cir;
pub mod error;
pub mod estimators;
pub mod grids;
pub mod heston;
pub mod oracle;
pub mod rng;
pub mod schemes;

pub use cir::{exact_moments, exact_sampler, laplace_transform, psi_k, CirParams, MomentTable};
pub use error::{Error, Result};
pub use schemes::{CirScheme, SchemeKind};
