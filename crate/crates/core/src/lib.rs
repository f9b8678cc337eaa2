pub mod agent;
pub mod bnn;
pub mod config;
pub mod envs;
pub mod harness;
pub mod error;
pub mod latent;
pub mod orchestrator;
pub mod ndcore;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
