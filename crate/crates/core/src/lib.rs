//! Optimal control of discrete-time fractional-order linear systems with
//! multiplicative noise and a quadratic cost.
//!
//! Two independent solvers are provided:
//!
//! * [`riccati`] lifts the fractional recursion to a finite-dimensional
//!   expanded state (see [`expanded`]) and runs a regularized backward
//!   Riccati sweep;
//! * [`dpalg`] performs dynamic programming on the original recursion,
//!   tracking the cost-to-go as an explicit, exponentially growing sum of
//!   squares.
//!
//! Both produce the same history-feedback [`Policy`](model::Policy).
//! [`verify`] and [`sim`] supply brute-force and Monte Carlo checks, and
//! [`cli`] implements the `fraclq` command line tool.
//!
//! ```
//! use fraclq::{problems::example1, riccati, dpalg};
//!
//! let spec = example1();
//! let ric = riccati::solve(&spec).unwrap();
//! let dp = dpalg::solve_dp(&spec).unwrap();
//! let (a, b) = (ric.optimal_cost(&spec.x0), dp.optimal_cost(&spec.x0));
//! assert!((a - b).abs() < 1e-9 * a);
//! ```

pub mod cli;
pub mod dpalg;
pub mod error;
pub mod expanded;
pub mod linalg;
pub mod model;
pub mod problems;
pub mod riccati;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use model::{Policy, ProblemSpec, ScaledSystem, Trajectory};
