//! Incentive compatibility for players facing an ex-ante constraint, and
//! auto-bidding mechanisms that achieve it.

pub mod builder;
pub mod characterizer;
pub mod error;
pub mod expr;
pub mod io;
pub mod model;
pub mod oracle;
pub mod simulator;
pub mod surrogate;
pub mod sweep;

pub use error::{Error, Result};
