//! Pricing of defaultable zero-coupon bonds when the default intensity is
//! only known to lie in a band `[lambda_lo, lambda_hi]`.
//!
//! The crate is organised bottom-up:
//!
//! * [`stochastic`] simulates Brownian paths, the bounded Jacobi intensity,
//!   default times and the multiplicative recovery process.
//! * [`measures`] builds the density processes that change the default
//!   intensity, the convex mixture of two intensities and empirical checks of
//!   the unit-expectation property.
//! * [`hjm`] holds the forward-curve model, the no-arbitrage drift conditions,
//!   bond prices under zero and fractional recovery and a Monte Carlo
//!   martingale test.
//! * [`pricing`] gives the analytic price bounds, the spectral series
//!   expansion, a Monte Carlo oracle and the assembled robust price interval.
//!
//! Every random quantity is a pure function of its inputs and a master seed.
//! Monte Carlo loops fan out over paths with [`exec`]; with the `parallel`
//! feature the work runs on rayon, otherwise sequentially, and both produce
//! bit-identical results.

pub mod error;
pub mod exec;
pub mod grid;
pub mod hjm;
pub mod measures;
pub mod pricing;
pub mod quad;
pub mod report;
pub mod rng;
pub mod stats;
pub mod stochastic;

pub use error::{Error, Result};
pub use exec::Execution;
pub use grid::{SamplePath, TimeGrid};
pub use stochastic::{JacobiParams, RecoveryParams};
