//! Causal world-model learning in a grid world.
//!
//! The agent keeps a Bernoulli belief over which inputs cause each state
//! feature ([`structure`]), a masked neural predictor shared by every sampled
//! graph ([`model`]), and picks action courses by imagining how much they would
//! move that belief ([`curiosity`]).

pub mod curiosity;
pub mod error;
pub mod experiment;
pub mod gridworld;
pub mod matrix;
pub mod model;
pub mod structure;

pub use error::{Error, Result};
pub use matrix::Matrix;
