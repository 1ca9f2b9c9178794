//! Equilibrium of a continuous-time reputation stopping game in which a
//! noninvestible agent pays to mimic an investible one while a principal
//! decides when to terminate at Poisson opportunities.

pub mod agent;
pub mod analysis;
pub mod cli;
pub mod curve;
pub mod error;
pub mod model;
pub mod normal;
pub mod numeric;
pub mod oracle;
pub mod principal;
pub mod sim;

pub use error::{Error, Result};
pub use model::{BeliefState, GameParams, Numerics};
