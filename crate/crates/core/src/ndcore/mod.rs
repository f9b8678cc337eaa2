//! Minimal dense-network machinery: parameters, forward and reverse passes,
//! Adam, gradient clipping and checkpoints.

mod adam;
pub mod checkpoint;
mod net;

pub use adam::{clip_gradient_l2, AdamConfig, AdamState};
pub use net::{
    backward, backward_batch, forward, forward_batch, Activation, ForwardTape, NetSpec,
    ParamVector,
};
