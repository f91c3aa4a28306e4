//! Learning model-error closures for imperfect mechanistic ODE models.
//!
//! The crate builds hybrid models `ẋ = f0(x) + m(x)` (or `x_{k+1} = Ψ0(x_k) + m(x_k)`)
//! where `f0` is a known but imperfect vector field and `m` is learned from
//! trajectory data:
//!
//! - [`markovian`]: memoryless random-feature closures fitted by ridge regression,
//!   in continuous and discrete time, including a shared scalar closure for the
//!   multiscale Lorenz '96 system;
//! - [`reservoir`]: memory-dependent closures `ẋ = f0(x) + C r`, `ṙ = tanh(Ar + Bx + c)`
//!   with random `(A, B, c)` and a fitted readout, initialized at forecast time by
//!   constant-gain 3DVAR ([`assimilate`]);
//! - [`metrics`]: validity time, KDE-based KL divergence of invariant measures and
//!   ACF error;
//! - [`theory`]: empirical excess-risk / generalization-error scaling for linear
//!   hypothesis classes;
//! - [`experiments`]: config-driven sweeps that write tidy CSV/JSON results.
//!
//! The runnable programs under `examples/` walk through each capability.

// Validation is written as `!(x > 0.0)` on purpose, so that NaN is rejected,
// and the numeric kernels index several parallel arrays in one loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assimilate;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod features;
pub mod integrate;
pub mod linalg;
pub mod markovian;
pub mod metrics;
pub mod reservoir;
pub mod rng;
pub mod theory;
pub mod trajectory;

pub use error::{Error, Result};
pub use trajectory::Trajectory;
