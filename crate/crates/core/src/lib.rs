//! Continual reinforcement learning through policy distillation.
//!
//! Each task is learned in isolation (state encoder, then a PPO teacher on the
//! encoded states), summarised as a dataset of observations annotated with the
//! teacher's action probabilities, and finally all datasets collected so far
//! are distilled into one pixel-input student that needs no task label.

pub mod arena;
pub mod container;
pub mod distill;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod ppo;
pub mod rng;
pub mod srl;

pub use error::{Error, Result};
