//! Kernel-based multi-step temporal-difference policy evaluation.
//!
//! The crate estimates the value function of a discounted Markov reward
//! process from a single trajectory, using kernel least-squares
//! temporal-difference learning with `K`-step or TD(λ) weights.
//!
//! * [`mrp`]: reward processes on `[0, 1)`, the two-half experiment family and samplers.
//! * [`rkhs`]: Walsh functions, the feature basis and truncated Mercer kernels.
//! * [`estimator`]: weight vectors and the forward kernel-LSTD solve.
//! * [`trace`]: the backward form with eligibility traces and its online recursion.
//! * [`oracle`]: exact population quantities on dyadic grids.
//! * [`theory`]: kernel complexity, critical radius, ridge choice and rate bounds.
//! * [`lowerbound`]: the hard instance family with numeric certificates.
//! * [`harness`]: Monte Carlo experiments with CSV output.

pub mod config;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod lowerbound;
pub mod mrp;
pub mod oracle;
pub mod rkhs;
pub mod theory;
pub mod trace;

pub use error::{Error, Result};
