//! Simulation and analysis toolkit for quantum estimation of CVaR risk
//! contributions in a single-factor Merton credit portfolio.
//!
//! The crate pairs a register-level simulation of the quantum pipeline
//! (tail-marking preparation, fixed-point amplitude amplification, payload
//! oracle, multi-mean estimation) with an exact enumerator of the
//! discretized model and a classical Monte Carlo baseline, and keeps an
//! exact ledger of every oracle invocation.

pub mod amplify;
pub mod complexity;
pub mod error;
pub mod estimator;
pub mod exact;
pub mod fixed;
pub mod io;
pub mod ledger;
pub mod mc;
pub mod model;
pub mod normal;
pub mod oracles;
pub mod qsim;
pub mod sum;

pub use error::{Error, Result};
