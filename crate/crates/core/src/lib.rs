//! Replica-symmetric and K-step replica-symmetry-broken quenched pressures for the
//! Sherrington-Kirkpatrick model with a signal and for the Hopfield model, with a
//! fixed-point solver and finite-size oracles.

pub mod cli;
pub mod hopfield;
pub mod oracle;
pub mod quadrature;
pub mod sk;
pub mod solver;
pub mod types;
pub mod verify;

pub use types::*;
