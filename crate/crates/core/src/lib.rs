//! Nash-equilibrium posteriors and linear signaling policies for
//! multi-sender Gaussian persuasion games with quadratic costs.
//!
//! The state `x ~ N(0, Σx)` is observed by every sender. Each sender commits
//! to a linear signal `y = L·x`; the receiver forms the MMSE estimate `x̂` and
//! plays its best response `u = K·x̂`. Every sender's expected cost then
//! reduces to `Tr(Qᵀ Q Σx) + Tr(V·S)` where `S = E[x̂ x̂ᵀ]` is the posterior
//! covariance, so equilibria are computed over posteriors in the Loewner
//! interval `[O, Σx]` and realized afterwards as linear policies.
//!
//! Modules:
//! - [`linalg`]: symmetric eigendecomposition, PSD square roots,
//!   pseudo-inverses, projections.
//! - [`game`]: player costs, receiver best response, incentive matrices and
//!   expected costs.
//! - [`equilibrium`]: stability tests, best responses, ordered equilibria,
//!   cooperative optimum.
//! - [`policy`]: Nash signaling policies, orthonormal rescaling and
//!   sequential entry.
//! - [`dynamic`]: finite-horizon greedy equilibria under linear dynamics.
//! - [`multireceiver`]: two coupled receivers.
//! - [`montecarlo`]: seeded sampling checks of the trace formulas.
//! - [`scenario`], [`experiments`], [`report`]: scenario files, the
//!   worked examples and CSV output used by the command-line tool.

pub mod dynamic;
pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod game;
pub mod linalg;
pub mod montecarlo;
pub mod multireceiver;
pub mod policy;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};
