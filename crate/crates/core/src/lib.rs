//! Long-term max-min throughput scheduling for a two-device wireless powered
//! network with finite batteries.

pub mod action;
pub mod approx;
pub mod channel;
pub mod error;
pub mod experiment;
pub mod fairness;
pub mod mdp;
pub mod model;
pub mod roots;
pub mod sim;
pub mod slot;

pub use error::{Error, Result};
