//! Honest-majority MPC over Mersenne prime fields with packed Shamir
//! secret sharing, and secure CNN inference built on it.

pub mod cost;
pub mod error;
pub mod field;
pub mod linear;
pub mod nn;
pub mod nonlinear;
pub mod offline;
pub mod oracle;
pub mod pss;
pub mod session;
pub mod transport;

pub use error::{Error, Result};
