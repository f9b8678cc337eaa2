use serde::{Deserialize, Serialize};

use super::results::write_versioned;
use super::{domain_dir, load_pretrained_model, write_manifest};
use crate::bnn::ModelForm;
use crate::config::ExperimentConfig;
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::latent::{tune_model, LatentPrior};
use crate::orchestrator::learn::fresh_model;
use crate::orchestrator::{episode_mse, retune_trigger, tags, test_instance, ModelState};
use crate::replay::{PrioritizedBuffer, Transition};
use crate::rng::{stream, SimRng};
use rand::Rng;

pub const COMPARE_SCHEMA: &str = "hipmdp-compare/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub run_id: String,
    pub domain: String,
    pub model: String,
    pub seed: u64,
    pub episode: usize,
    /// One-step error on this episode of the model held before it.
    pub mse: f64,
    pub tuned: bool,
    /// In-sample error right after tuning on this episode.
    pub post_tune_mse: Option<f64>,
}

const MODELS: [&str; 4] = ["embedded", "linear", "average", "scratch"];

struct Tracked {
    name: &'static str,
    state: Option<ModelState>,
    buffer: PrioritizedBuffer,
    post_tune: Option<f64>,
    rng: SimRng,
}

/// Uniformly random episodes on the seed's test instance, shared by all
/// models so their errors are measured on the same transitions.
fn behaviour_episodes(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Vec<Transition>>> {
    let instance = test_instance(cfg, seed)?;
    let mut env = Environment::new(instance.clone());
    let mut rng = stream(seed, tags::COMPARE);
    let mut episodes = Vec::with_capacity(cfg.harness.compare_episodes);
    for _ in 0..cfg.harness.compare_episodes {
        let mut s = env.reset(&mut rng);
        let mut episode = Vec::new();
        loop {
            let a = rng.random_range(0..cfg.domain.action_count());
            let r = env.step(a)?;
            episode.push(Transition {
                state: s,
                action: a,
                reward: r.reward,
                next_state: r.next_state.clone(),
                done: r.done,
                instance_id: instance.id,
            });
            s = r.next_state;
            if r.done || env.truncated() {
                break;
            }
        }
        episodes.push(episode);
    }
    Ok(episodes)
}

fn compare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<CompareRow>> {
    let ps = cfg.pretrain_seed_for(seed);
    let latent_prior = LatentPrior::isotropic(cfg.latent.dim, cfg.latent.prior_variance);
    let mut tracked = Vec::with_capacity(MODELS.len());
    for (k, name) in MODELS.into_iter().enumerate() {
        let mut rng = stream(seed, tags::COMPARE + 1 + k as u64);
        let form = match name {
            "embedded" => Some(ModelForm::Embedded),
            "linear" => Some(ModelForm::Linear),
            "average" => Some(ModelForm::Plain),
            _ => None,
        };
        let state = match form {
            Some(form) => {
                let model = load_pretrained_model(cfg, ps, form, "compare-models")?;
                let embedding = if model.posterior.layout().uses_latent() {
                    latent_prior.sample(&mut rng)
                } else {
                    Vec::new()
                };
                Some(ModelState {
                    posterior: model.posterior,
                    embedding,
                })
            }
            None => None,
        };
        tracked.push(Tracked {
            name,
            state,
            buffer: PrioritizedBuffer::new(cfg.replay),
            post_tune: None,
            rng,
        });
    }

    let samples = cfg.bnn.training.predict_samples;
    let mut rows = Vec::new();
    for (i, episode) in behaviour_episodes(cfg, seed)?.iter().enumerate() {
        for t in tracked.iter_mut() {
            for tr in episode {
                t.buffer.push(tr.clone());
            }
            if t.state.is_none() {
                t.state = Some(fresh_model(cfg, &t.buffer, &mut t.rng)?);
            }
            let m = t.state.as_mut().expect("model present");
            let mse = episode_mse(&m.posterior, &m.embedding, episode, samples, &mut t.rng)?;
            let tuned = retune_trigger(i, Some(mse), t.post_tune, cfg.orchestrator.retune_factor);
            if tuned {
                tune_model(
                    &mut m.embedding,
                    &mut m.posterior,
                    &mut t.buffer,
                    &cfg.latent.update,
                    &cfg.bnn.training,
                    &mut t.rng,
                )?;
                t.post_tune = Some(episode_mse(&m.posterior, &m.embedding, episode, samples, &mut t.rng)?);
            }
            rows.push(CompareRow {
                run_id: format!("{}-compare-{seed}", cfg.domain),
                domain: cfg.domain.name().to_owned(),
                model: t.name.to_owned(),
                seed,
                episode: i + 1,
                mse,
                tuned,
                post_tune_mse: if tuned { t.post_tune } else { None },
            });
        }
    }
    Ok(rows)
}

/// Per-episode one-step error of the embedded, linear, average and scratch
/// models on a new instance explored by a random policy.
pub fn cmd_compare_models(cfg: &ExperimentConfig) -> Result<Vec<CompareRow>> {
    if cfg.harness.compare_episodes == 0 {
        return Err(Error::Config("harness.compare_episodes must be positive".into()));
    }
    let dir = domain_dir(cfg);
    write_manifest(&dir, "compare-manifest.json", cfg)?;
    let mut all = Vec::new();
    for &seed in &cfg.seeds {
        let rows = compare_seed(cfg, seed)?;
        for r in rows.iter().filter(|r| r.episode == 2) {
            log::info!("seed {seed}: {} episode-2 mse {:.4e}", r.model, r.mse);
        }
        all.extend(rows);
    }
    write_versioned(&dir.join("compare_models.csv"), COMPARE_SCHEMA, &all)?;
    Ok(all)
}
