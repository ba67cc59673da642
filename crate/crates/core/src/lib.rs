//! Simulator and learning-based optimizer for RIS-assisted D2D underlay
//! networks: fading channel models, the underlay environment, from-scratch
//! double-DQN machinery for the two learning tiers, benchmark schemes, and a
//! reproducible experiment harness.

pub mod agents;
pub mod baselines;
pub mod channel;
pub mod environment;
pub mod error;
pub mod harness;
pub mod neural;
pub mod seeding;

pub use error::{Error, Result};
