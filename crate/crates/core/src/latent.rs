//! Per-instance latent embeddings: prior draws, input-only gradient updates
//! and the alternating tuning loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bnn::{alpha_energy_sampled, squared_errors, train_bnn, AlphaConfig, SharedLatent, WeightPosterior};
use crate::error::{Error, Result};
use crate::ndcore::{AdamConfig, AdamState};
use crate::replay::{PrioritizedBuffer, Transition};
use crate::rng::normal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPrior {
    pub mean: Vec<f64>,
    /// Diagonal of the covariance.
    pub variance: Vec<f64>,
}

impl LatentPrior {
    pub fn isotropic(dim: usize, variance: f64) -> Self {
        Self {
            mean: vec![0.0; dim],
            variance: vec![variance; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(m, v)| m + v.sqrt() * normal(rng))
            .collect()
    }
}

impl Default for LatentPrior {
    fn default() -> Self {
        Self::isotropic(5, 0.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentConfig {
    pub learning_rate: f64,
    /// Adam steps per latent update.
    pub steps: usize,
    pub minibatch: usize,
    /// Latent/network alternations per tuning call.
    pub rounds: usize,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            steps: 500,
            minibatch: 32,
            rounds: 2,
        }
    }
}

/// Moves `embedding` down the energy gradient with the network frozen.
pub fn update_latent<R: Rng + ?Sized>(
    embedding: &mut [f64],
    post: &WeightPosterior,
    buffer: &mut PrioritizedBuffer,
    cfg: &LatentConfig,
    alpha: &AlphaConfig,
    rng: &mut R,
) -> Result<()> {
    if cfg.steps == 0 {
        return Ok(());
    }
    if buffer.is_empty() {
        return Err(Error::InvalidState("latent update needs instance data".into()));
    }
    if !post.layout().uses_latent() {
        return Err(Error::InvalidArgument("model has no latent input".into()));
    }
    let mut adam = AdamState::new(embedding.len(), AdamConfig::with_learning_rate(cfg.learning_rate));
    let n_total = buffer.len() as f64;
    for _ in 0..cfg.steps {
        let draw = buffer.sample(cfg.minibatch, rng)?;
        let records: Vec<&Transition> = draw.indices.iter().map(|&i| buffer.get(i)).collect();
        let batch = post.encode_batch(&records, &draw.weights, &SharedLatent(embedding), n_total)?;
        let eval = alpha_energy_sampled(post, &batch, alpha.alpha, alpha.mc_samples, rng)?;
        let grad = eval.latent_grad.sum_axis(ndarray::Axis(0)).to_vec();
        adam.step(embedding, &grad)?;
        buffer.update_priorities(&draw.indices, &squared_errors(&batch, &eval.mean_prediction))?;
    }
    Ok(())
}

/// Alternates latent and network updates on one instance's data, latent
/// first. Models without latent input only get network updates.
pub fn tune_model<R: Rng + ?Sized>(
    embedding: &mut [f64],
    post: &mut WeightPosterior,
    buffer: &mut PrioritizedBuffer,
    cfg: &LatentConfig,
    alpha: &AlphaConfig,
    rng: &mut R,
) -> Result<()> {
    for _ in 0..cfg.rounds {
        if post.layout().uses_latent() {
            update_latent(embedding, post, buffer, cfg, alpha, rng)?;
        }
        train_bnn(post, buffer, &SharedLatent(embedding), alpha, rng)?;
    }
    Ok(())
}
