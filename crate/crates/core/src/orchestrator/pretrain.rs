use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tags;
use crate::agent::{policy_update, select_action, soft_update, QNetworkPair};
use crate::bnn::{train_bnn, ModelForm, ModelLayout, Standardizer, WeightPosterior};
use crate::config::{ExperimentConfig, Variant};
use crate::envs::{sample_instance, Domain, EnvInstance, Environment, HiddenParams};
use crate::error::{Error, Result};
use crate::latent::{tune_model, LatentPrior};
use crate::ndcore::checkpoint::{read_f64_array, read_json, write_f64_array, write_json};
use crate::replay::{PrioritizedBuffer, ReplayConfig, Transition};
use crate::rng::{child_seed, stream};

/// Transitions gathered on the pretraining instances, one buffer each.
#[derive(Debug, Clone)]
pub struct PretrainData {
    pub domain: Domain,
    pub instances: Vec<EnvInstance>,
    pub buffers: Vec<PrioritizedBuffer>,
}

#[derive(Debug, Clone)]
pub struct PretrainedModel {
    pub posterior: WeightPosterior,
    /// Learned latent per pretraining instance; empty for latent-free models.
    pub embeddings: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DataHeader {
    domain: Domain,
    instances: Vec<EnvInstance>,
    buffer_lengths: Vec<usize>,
    record_width: usize,
}

impl PretrainData {
    pub fn len(&self) -> usize {
        self.buffers.iter().map(PrioritizedBuffer::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every transition in collection order, priorities preserved.
    pub fn global_buffer(&self, cfg: ReplayConfig) -> PrioritizedBuffer {
        let mut global = PrioritizedBuffer::new(cfg);
        for b in &self.buffers {
            for (i, r) in b.records().iter().enumerate() {
                global.push_with_priority(r.clone(), b.priority(i));
            }
        }
        global
    }

    fn record_width(&self) -> usize {
        2 * self.domain.state_dim() + 5
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let width = self.record_width();
        let mut flat = Vec::with_capacity(self.len() * width);
        for b in &self.buffers {
            for (i, r) in b.records().iter().enumerate() {
                flat.extend_from_slice(&r.state);
                flat.push(r.action as f64);
                flat.push(r.reward);
                flat.extend_from_slice(&r.next_state);
                flat.push(if r.done { 1.0 } else { 0.0 });
                flat.push(r.instance_id as f64);
                flat.push(b.priority(i));
            }
        }
        write_json(
            &dir.join("data.json"),
            &DataHeader {
                domain: self.domain,
                instances: self.instances.clone(),
                buffer_lengths: self.buffers.iter().map(PrioritizedBuffer::len).collect(),
                record_width: width,
            },
        )?;
        write_f64_array(&dir.join("data.bin"), &flat)
    }

    pub fn load(dir: &Path, cfg: ReplayConfig) -> Result<Self> {
        let header: DataHeader = read_json(&dir.join("data.json"))?;
        let d = header.domain.state_dim();
        let width = 2 * d + 5;
        if header.record_width != width {
            return Err(Error::Format {
                path: dir.join("data.json"),
                message: "record width does not match the domain".into(),
            });
        }
        let total: usize = header.buffer_lengths.iter().sum();
        let flat = read_f64_array(&dir.join("data.bin"), total * width)?;
        let mut rows = flat.chunks_exact(width);
        let mut buffers = Vec::new();
        for &n in &header.buffer_lengths {
            let mut b = PrioritizedBuffer::new(cfg);
            for row in rows.by_ref().take(n) {
                let r = Transition {
                    state: row[..d].to_vec(),
                    action: row[d] as usize,
                    reward: row[d + 1],
                    next_state: row[d + 2..2 * d + 2].to_vec(),
                    done: row[2 * d + 2] != 0.0,
                    instance_id: row[2 * d + 3] as usize,
                };
                b.push_with_priority(r, row[2 * d + 4]);
            }
            buffers.push(b);
        }
        Ok(Self {
            domain: header.domain,
            instances: header.instances,
            buffers,
        })
    }
}

/// Model form used by a pretrained variant.
pub fn form_for(variant: Variant) -> Option<ModelForm> {
    match variant {
        Variant::Embedded => Some(ModelForm::Embedded),
        Variant::Linear => Some(ModelForm::Linear),
        Variant::Average | Variant::Scratch => Some(ModelForm::Plain),
        Variant::ModelFree => None,
    }
}

/// Runs a per-instance model-free learner on each pretraining instance and
/// records everything it sees. Exploration anneals linearly over episodes.
pub fn collect_pretraining_data(cfg: &ExperimentConfig, seed: u64) -> Result<PretrainData> {
    let domain = cfg.domain;
    let o = &cfg.orchestrator;
    let mut rng = stream(seed, tags::PRETRAIN_DATA);
    let mut instances = Vec::with_capacity(o.pretrain_instances);
    let mut buffers = Vec::with_capacity(o.pretrain_instances);
    for id in 0..o.pretrain_instances {
        let mut inst = sample_instance(domain, id, child_seed(&mut rng), &cfg.envs)?;
        if domain == Domain::Nav2d {
            // alternate classes so both appear in the batch
            inst.params = HiddenParams::Nav2d { class: (id % 2) as u8 };
        }
        let mut pair = QNetworkPair::new(
            domain.state_dim(),
            domain.action_count(),
            &cfg.agent.hidden,
            cfg.agent.learning_rate,
            &mut rng,
        )?;
        let mut td = PrioritizedBuffer::new(cfg.replay);
        let mut data = PrioritizedBuffer::new(cfg.replay);
        let mut env = Environment::new(inst.clone());
        let features = |s: &[f64]| domain.policy_features(s);
        for ep in 0..o.pretrain_episodes {
            let frac = if o.pretrain_episodes > 1 {
                ep as f64 / (o.pretrain_episodes - 1) as f64
            } else {
                0.0
            };
            let eps = o.pretrain_epsilon_start + (o.pretrain_epsilon_end - o.pretrain_epsilon_start) * frac;
            let mut s = env.reset(&mut rng);
            let mut t = 0;
            loop {
                let a = select_action(&pair, &features(&s), eps, &mut rng)?;
                let r = env.step(a)?;
                let rec = Transition {
                    state: s.clone(),
                    action: a,
                    reward: r.reward,
                    next_state: r.next_state.clone(),
                    done: r.done,
                    instance_id: id,
                };
                td.push(rec.clone());
                data.push(rec);
                if t % cfg.agent.update_period == 0 {
                    policy_update(&mut pair, &mut td, &cfg.agent, &features, &mut rng)?;
                    soft_update(&mut pair, cfg.agent.tau);
                }
                t += 1;
                s = r.next_state;
                if r.done || env.truncated() {
                    break;
                }
            }
        }
        log::info!("collected {} transitions on pretraining instance {id}", data.len());
        instances.push(inst);
        buffers.push(data);
    }
    Ok(PretrainData {
        domain,
        instances,
        buffers,
    })
}

/// Jointly fits the network and the per-instance latents by alternating
/// tuning passes over the pretraining instances. The latent-free form trains
/// on the pooled data with the same number of network updates.
pub fn fit_pretrained(cfg: &ExperimentConfig, data: &PretrainData, form: ModelForm, seed: u64) -> Result<PretrainedModel> {
    let mut rng = stream(seed, tags::PRETRAIN_FIT + 100 * form as u64);
    let layout = ModelLayout::new(data.domain, form, cfg.latent.dim);
    let standardizer = if data.domain == Domain::Hiv {
        let states: Vec<&[f64]> = data
            .buffers
            .iter()
            .flat_map(|b| b.records().iter().map(|r| r.state.as_slice()))
            .collect();
        Standardizer::fit(&states)?
    } else {
        Standardizer::identity(data.domain.state_dim())
    };
    let schedule = cfg.bnn.prior;
    let mut prior = crate::bnn::PriorSpec {
        weight_variance: schedule.variance_after(0),
        ..Default::default()
    };
    let mut post = WeightPosterior::new(layout.clone(), &cfg.bnn.hidden, prior, standardizer, cfg.bnn.init, &mut rng)?;
    let latent_prior = LatentPrior::isotropic(cfg.latent.dim, cfg.latent.prior_variance);
    let mut embeddings: Vec<Vec<f64>> = if layout.uses_latent() {
        data.instances.iter().map(|_| latent_prior.sample(&mut rng)).collect()
    } else {
        Vec::new()
    };
    let mut buffers = data.buffers.clone();
    let mut pooled = data.global_buffer(cfg.replay);
    let none: Vec<Vec<f64>> = Vec::new();
    for pass in 0..cfg.orchestrator.pretrain_passes {
        prior.weight_variance = schedule.variance_after(pass);
        post.prior = prior;
        if layout.uses_latent() {
            for (w, buf) in embeddings.iter_mut().zip(buffers.iter_mut()) {
                tune_model(w, &mut post, buf, &cfg.latent.update, &cfg.bnn.training, &mut rng)?;
            }
        } else {
            for _ in 0..cfg.latent.update.rounds * buffers.len() {
                train_bnn(&mut post, &mut pooled, &none, &cfg.bnn.training, &mut rng)?;
            }
        }
        log::info!("pretraining pass {} of {} done ({:?})", pass + 1, cfg.orchestrator.pretrain_passes, form);
    }
    if cfg.orchestrator.pretrain_passes > 0 {
        post.prior.weight_variance = schedule.variance_after(cfg.orchestrator.pretrain_passes);
    }
    Ok(PretrainedModel {
        posterior: post,
        embeddings,
    })
}

/// Data collection followed by fitting one model form.
pub fn pretrain_batch(cfg: &ExperimentConfig, form: ModelForm, seed: u64) -> Result<(PretrainData, PretrainedModel)> {
    let data = collect_pretraining_data(cfg, seed)?;
    let model = fit_pretrained(cfg, &data, form, seed)?;
    Ok((data, model))
}
