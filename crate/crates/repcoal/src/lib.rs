//! Analysis toolkit for repeated games with coalitional deviations:
//! coalitional minmax values, feasible / core / balancedness payoff sets,
//! folk-theorem automaton construction under four monitoring regimes,
//! convention stability verification, simple-game characterizations, and
//! grid-based self-generation set iteration.

pub mod error;
pub mod rat;

pub mod game;
pub mod lp;
pub mod minmax;

pub mod sets;
pub mod simple;

pub mod conventions;
pub mod folk;
pub mod stability;

pub use error::{Error, Result};
pub use rat::Q;
