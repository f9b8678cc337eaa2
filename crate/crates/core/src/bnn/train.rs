use ndarray::Array2;
use rand::Rng;

use super::energy::{alpha_energy_sampled, EnergyBatch};
use super::{AlphaConfig, WeightPosterior};
use crate::error::{Error, Result};
use crate::ndcore::{AdamConfig, AdamState};
use crate::replay::{PrioritizedBuffer, Transition};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub first_energy: f64,
    pub last_energy: f64,
    pub steps: usize,
}

impl WeightPosterior {
    /// Encodes transitions into a minibatch, resolving each record's latent
    /// through `latents[instance_id]`.
    pub fn encode_batch(
        &self,
        records: &[&Transition],
        weights: &[f64],
        latents: &dyn LatentSource,
        n_total: f64,
    ) -> Result<EnergyBatch> {
        let layout = self.layout();
        let b = records.len();
        let lat = if layout.uses_latent() { layout.latent_dim } else { 0 };
        let mut features = Array2::<f64>::zeros((b, layout.feature_width()));
        let mut latent_rows = Array2::<f64>::zeros((b, lat));
        let mut targets = Array2::<f64>::zeros((b, layout.state_dim()));
        for (n, r) in records.iter().enumerate() {
            for (j, v) in self.features(&r.state, r.action).into_iter().enumerate() {
                features[[n, j]] = v;
            }
            for (j, v) in self.target(&r.state, &r.next_state).into_iter().enumerate() {
                targets[[n, j]] = v;
            }
            if lat > 0 {
                let w = latents.latent(r.instance_id).ok_or_else(|| {
                    Error::InvalidArgument(format!("no latent for instance {}", r.instance_id))
                })?;
                if w.len() != lat {
                    return Err(Error::InvalidArgument("latent length mismatch".into()));
                }
                for (j, v) in w.iter().enumerate() {
                    latent_rows[[n, j]] = *v;
                }
            }
        }
        Ok(EnergyBatch {
            features,
            latents: latent_rows,
            targets,
            weights: weights.to_vec(),
            n_total,
        })
    }
}

/// Latent vector of each instance, looked up at training time.
pub trait LatentSource {
    fn latent(&self, instance_id: usize) -> Option<&[f64]>;
}

/// Latents indexed by instance id.
impl LatentSource for [Vec<f64>] {
    fn latent(&self, instance_id: usize) -> Option<&[f64]> {
        self.get(instance_id).map(Vec::as_slice)
    }
}

impl LatentSource for Vec<Vec<f64>> {
    fn latent(&self, instance_id: usize) -> Option<&[f64]> {
        self.as_slice().latent(instance_id)
    }
}

/// One latent shared by every record.
pub struct SharedLatent<'a>(pub &'a [f64]);

impl LatentSource for SharedLatent<'_> {
    fn latent(&self, _: usize) -> Option<&[f64]> {
        Some(self.0)
    }
}

/// Squared error of the averaged prediction for each record.
pub(crate) fn squared_errors(batch: &EnergyBatch, mean_prediction: &Array2<f64>) -> Vec<f64> {
    (0..batch.len())
        .map(|n| {
            batch
                .targets
                .row(n)
                .iter()
                .zip(mean_prediction.row(n))
                .map(|(y, p)| (y - p).powi(2))
                .sum()
        })
        .collect()
}

/// Fits the posterior to `buffer` with Adam; latents are read only.
///
/// Each epoch draws `draw_size` records by prioritized sampling and steps
/// once per minibatch. Sampled records get their squared prediction error as
/// new priority.
pub fn train_bnn<R: Rng + ?Sized>(
    post: &mut WeightPosterior,
    buffer: &mut PrioritizedBuffer,
    latents: &dyn LatentSource,
    cfg: &AlphaConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(Error::InvalidState("cannot train on an empty buffer".into()));
    }
    let mut adam = AdamState::new(post.theta().len(), AdamConfig::with_learning_rate(cfg.learning_rate));
    let n_total = buffer.len() as f64;
    let mut report = TrainReport {
        first_energy: f64::NAN,
        last_energy: f64::NAN,
        steps: 0,
    };
    for _ in 0..cfg.epochs {
        let draw = buffer.sample(cfg.draw_size, rng)?;
        for (idx, w) in draw
            .indices
            .chunks(cfg.minibatch)
            .zip(draw.weights.chunks(cfg.minibatch))
        {
            let records: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i)).collect();
            let batch = post.encode_batch(&records, w, latents, n_total)?;
            let eval = alpha_energy_sampled(post, &batch, cfg.alpha, cfg.mc_samples, rng)?;
            adam.step(post.theta_mut(), &eval.theta_grad)?;
            buffer.update_priorities(idx, &squared_errors(&batch, &eval.mean_prediction))?;
            if report.steps == 0 {
                report.first_energy = eval.energy;
            }
            report.last_energy = eval.energy;
            report.steps += 1;
        }
    }
    Ok(report)
}
