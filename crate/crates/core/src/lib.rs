//! Obstacle trajectory forecasting with bootstrapped singular spectrum
//! analysis, and collision-avoiding receding-horizon planning under
//! distributionally robust chance constraints.

pub mod error;
pub mod risk;
pub mod sim;
pub mod bootstrap;
pub mod planner;
pub mod qp;
pub mod ssa;

pub use error::{Error, Result};
