//! Spectral-Galerkin simulation and Monte Carlo verification machinery for
//! gradient-type SDEs on `L²(0,1)`:
//!
//! ```text
//! dX = (AX − ∇V(X) + B(X)) dt + dW
//! ```
//!
//! with `A` the Dirichlet Laplacian, `V` convex, `B` bounded measurable and
//! `W` cylindrical Brownian motion. The crate is `no_std` (with `alloc`); all
//! randomness flows through explicit [`rng::StreamKey`]s so every estimator is
//! a deterministic function of its inputs.
//!
//! Module map:
//!
//! - [`spectral`]: eigenbasis, collocation grid, Gaussian and Gibbs sampling.
//! - [`ou`]: exact Ornstein–Uhlenbeck transitions, Mehler semigroup, resolvent.
//! - [`potential`]: convex potentials, Yosida resolvents, bounded drifts.
//! - [`integrators`]: splitting schemes, coupled paths, Girsanov weights.
//! - [`zvonkin`]: Kolmogorov resolvent estimators and the transform `φ = id + U`.
#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod integrators;
pub mod observable;
pub mod ou;
pub mod potential;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod zvonkin;

pub use error::{Error, Result};
pub use spectral::{CoeffVec, GridFunction, SpectralModel};
pub use stats::Estimate;
