//! Computational laboratory for GCD quadratic forms and dilated sums of
//! bounded-variation functions.
//!
//! The crate is organised by concern:
//!
//! * [`numcore`] exact integers, primes, dyadic rationals and symbolic `2^c * m`.
//! * [`gcdforms`] the normalized GCD form, its box closed form and the product
//!   and simplified upper bounds together with the parameter schedule.
//! * [`galgen`] Gál-type extremal sets and a local search over them.
//! * [`bvfun`] piecewise-linear periodic functions with exact integration.
//! * [`series`] partial sums `sum f(n_k x)` with exact argument reduction.
//! * [`discrepancy`] exact star/extreme discrepancy and Koksma checks.
//! * [`coupling`] dyadic conditional expectations and block variables.
//! * [`blockconstruct`] the divergence counterexample and its weights.
//! * [`probes`] growth-bound probes for dilated sums.
//!
//! Monte Carlo loops draw from counter-based streams and reduce over fixed
//! chunks, so results are bit-identical for any thread count. The `parallel`
//! feature (on by default) runs the chunks on rayon.

pub mod blockconstruct;
pub mod bvfun;
pub mod coupling;
pub mod discrepancy;
pub mod error;
pub mod fmt;
pub mod galgen;
pub mod gcdforms;
pub mod numcore;
pub mod par;
pub mod probes;
pub mod rng;
pub mod series;
pub mod sum;

pub use error::{LabError, Result};
