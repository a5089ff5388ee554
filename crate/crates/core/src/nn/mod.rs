//! Minimal deterministic neural-network substrate.

pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod optim;
pub mod tensor;

pub use network::{softmax, softmax_in_place, Gradients, LayerSpec, Network, NetworkSpec, Tape};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use tensor::Tensor;
