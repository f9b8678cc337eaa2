use std::time::Instant;

use rand::Rng;

use super::pretrain::{form_for, PretrainData, PretrainedModel};
use super::{tags, EpisodeResult};
use crate::agent::{policy_update, select_action, soft_update, EpsilonSchedule, QNetworkPair};
use crate::bnn::{ModelLayout, PriorSpec, Standardizer, WeightPosterior};
use crate::config::{ExperimentConfig, Variant};
use crate::envs::{sample_instance, Domain, EnvInstance, Environment, StepResult};
use crate::error::{first_non_finite, Error, Result};
use crate::latent::{tune_model, LatentPrior};
use crate::replay::{PrioritizedBuffer, Transition};
use crate::rng::{stream, SimRng};

/// Source of simulated steps for fictional episodes.
pub trait TransitionModel {
    fn step(&self, state: &[f64], action: usize, rng: &mut SimRng) -> Result<StepResult>;
}

/// Learned dynamics plus the instance's known reward function.
pub struct ModelSampler<'a> {
    pub posterior: &'a WeightPosterior,
    pub embedding: &'a [f64],
    pub instance: &'a EnvInstance,
    /// Use the predictive mean of this many draws instead of one draw.
    pub mean_samples: Option<usize>,
}

impl TransitionModel for ModelSampler<'_> {
    fn step(&self, state: &[f64], action: usize, rng: &mut SimRng) -> Result<StepResult> {
        let k = self.mean_samples.unwrap_or(1);
        let p = self.posterior.predict(state, action, self.embedding, rng, k)?;
        let next = self.posterior.decode(state, &p.mean);
        if let Some(i) = first_non_finite(&next) {
            return Err(Error::numerical("simulated next state", Some(i)));
        }
        Ok(self.instance.resolve_model_step(state, action, &next))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEpStats {
    pub steps: usize,
    pub total_reward: f64,
    pub policy_updates: usize,
}

/// One fictional episode of at most `step_cap` steps from `start`. The
/// policy is updated after storing step `t` whenever `t % update_period == 0`.
#[allow(clippy::too_many_arguments)]
pub fn sim_ep(
    model: &dyn TransitionModel,
    domain: Domain,
    start: &[f64],
    pair: &mut QNetworkPair,
    fictional: &mut PrioritizedBuffer,
    epsilon: f64,
    cfg: &crate::agent::PolicyConfig,
    rng: &mut SimRng,
) -> Result<SimEpStats> {
    let features = |s: &[f64]| domain.policy_features(s);
    let mut s = start.to_vec();
    let mut stats = SimEpStats {
        steps: 0,
        total_reward: 0.0,
        policy_updates: 0,
    };
    for t in 0..domain.step_cap() {
        let a = select_action(pair, &features(&s), epsilon, rng)?;
        let r = model.step(&s, a, rng)?;
        fictional.push(Transition {
            state: s,
            action: a,
            reward: r.reward,
            next_state: r.next_state.clone(),
            done: r.done,
            instance_id: 0,
        });
        stats.steps += 1;
        stats.total_reward += r.reward;
        if t % cfg.update_period == 0 {
            policy_update(pair, fictional, cfg, &features, rng)?;
            soft_update(pair, cfg.tau);
            stats.policy_updates += 1;
        }
        s = r.next_state;
        if r.done {
            break;
        }
    }
    Ok(stats)
}

/// Mean over transitions and state dimensions of the squared error between
/// the predictive mean and the observed delta, in model coordinates.
pub fn episode_mse(
    post: &WeightPosterior,
    embedding: &[f64],
    transitions: &[Transition],
    samples: usize,
    rng: &mut SimRng,
) -> Result<f64> {
    if transitions.is_empty() {
        return Err(Error::InvalidArgument("MSE of an empty episode".into()));
    }
    let mut total = 0.0;
    for tr in transitions {
        let p = post.predict(&tr.state, tr.action, embedding, rng, samples)?;
        let y = post.target(&tr.state, &tr.next_state);
        total += y.iter().zip(&p.mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64;
    }
    Ok(total / transitions.len() as f64)
}

/// Retune on the first episode, or when the episode's error exceeds
/// `factor` times the error measured right after the last tuning.
pub fn retune_trigger(episode: usize, mse: Option<f64>, post_tune_mse: Option<f64>, factor: f64) -> bool {
    if episode == 0 {
        return true;
    }
    match (mse, post_tune_mse) {
        (Some(m), Some(base)) => m > factor * base,
        (_, None) => true,
        (None, Some(_)) => false,
    }
}

/// A transition model and the latent it is conditioned on.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub posterior: WeightPosterior,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub results: Vec<EpisodeResult>,
    /// Steps taken in the real environment.
    pub interactions: u64,
    pub tunings: usize,
    pub fictional_episodes: usize,
    pub model: Option<ModelState>,
    pub pair: QNetworkPair,
}

pub(crate) fn fresh_model(cfg: &ExperimentConfig, instance_buf: &PrioritizedBuffer, rng: &mut SimRng) -> Result<ModelState> {
    let domain = cfg.domain;
    let standardizer = if domain == Domain::Hiv {
        let states: Vec<&[f64]> = instance_buf.records().iter().map(|r| r.state.as_slice()).collect();
        Standardizer::fit(&states)?
    } else {
        Standardizer::identity(domain.state_dim())
    };
    let prior = PriorSpec {
        weight_variance: cfg.bnn.prior.final_variance(),
        ..PriorSpec::default()
    };
    let layout = ModelLayout::new(domain, crate::bnn::ModelForm::Plain, cfg.latent.dim);
    Ok(ModelState {
        posterior: WeightPosterior::new(layout, &cfg.bnn.hidden, prior, standardizer, cfg.bnn.init, rng)?,
        embedding: Vec::new(),
    })
}

/// Model-based policy learning on one new instance.
///
/// `model` is the pretrained transition model with a fresh latent; `None`
/// builds an untrained latent-free model after the first episode. Real
/// transitions go to `global` and to a per-instance buffer.
pub fn learn_policy(
    cfg: &ExperimentConfig,
    instance: &EnvInstance,
    mut model: Option<ModelState>,
    global: &mut PrioritizedBuffer,
    rng: &mut SimRng,
    env_rng: &mut SimRng,
) -> Result<RunOutcome> {
    let domain = cfg.domain;
    let o = &cfg.orchestrator;
    let mut pair = QNetworkPair::new(
        domain.state_dim(),
        domain.action_count(),
        &cfg.agent.hidden,
        cfg.agent.learning_rate,
        rng,
    )?;
    let mut epsilon = EpsilonSchedule::new(&cfg.agent);
    let mut fictional = PrioritizedBuffer::new(cfg.replay);
    let mut instance_buf = PrioritizedBuffer::new(cfg.replay);
    let mut env = Environment::new(instance.clone());
    let features = |s: &[f64]| domain.policy_features(s);
    let mut post_tune_mse: Option<f64> = None;
    let mut results = Vec::with_capacity(o.episodes);
    let mut tunings = 0;
    let mut fictional_count = 0;
    let mean_samples = o.mean_rollouts.then_some(cfg.bnn.training.predict_samples);

    for i in 0..o.episodes {
        let clock = Instant::now();
        let start = env.reset(env_rng);
        let mut s = start.clone();
        let mut episode = Vec::new();
        let mut total = 0.0;
        loop {
            let a = select_action(&pair, &features(&s), epsilon.value, rng)?;
            let r = env.step(a)?;
            total += r.reward;
            let rec = Transition {
                state: s,
                action: a,
                reward: r.reward,
                next_state: r.next_state.clone(),
                done: r.done,
                instance_id: instance.id,
            };
            global.push(rec.clone());
            instance_buf.push(rec.clone());
            episode.push(rec);
            s = r.next_state;
            if r.done || env.truncated() {
                break;
            }
        }
        if model.is_none() {
            model = Some(fresh_model(cfg, &instance_buf, rng)?);
        }
        let m = model.as_mut().expect("model present");
        let mse = episode_mse(&m.posterior, &m.embedding, &episode, cfg.bnn.training.predict_samples, rng)?;

        if retune_trigger(i, Some(mse), post_tune_mse, o.retune_factor) {
            tune_model(
                &mut m.embedding,
                &mut m.posterior,
                &mut instance_buf,
                &cfg.latent.update,
                &cfg.bnn.training,
                rng,
            )?;
            tunings += 1;
            post_tune_mse = Some(episode_mse(
                &m.posterior,
                &m.embedding,
                &episode,
                cfg.bnn.training.predict_samples,
                rng,
            )?);
            for _ in 0..o.fictional_episodes {
                run_sim(m, instance, &start, &mut pair, &mut fictional, &mut epsilon, cfg, mean_samples, rng)?;
                fictional_count += 1;
            }
        }
        run_sim(m, instance, &start, &mut pair, &mut fictional, &mut epsilon, cfg, mean_samples, rng)?;
        fictional_count += 1;

        results.push(EpisodeResult {
            episode: i + 1,
            total_reward: total,
            steps: episode.len(),
            wall_ms: clock.elapsed().as_millis() as u64,
            model_mse: Some(mse),
        });
        log::debug!("episode {} reward {total:.2} steps {} mse {mse:.4e}", i + 1, episode.len());
    }
    Ok(RunOutcome {
        results,
        interactions: env.interactions(),
        tunings,
        fictional_episodes: fictional_count,
        model,
        pair,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_sim(
    m: &ModelState,
    instance: &EnvInstance,
    start: &[f64],
    pair: &mut QNetworkPair,
    fictional: &mut PrioritizedBuffer,
    epsilon: &mut EpsilonSchedule,
    cfg: &ExperimentConfig,
    mean_samples: Option<usize>,
    rng: &mut SimRng,
) -> Result<()> {
    let sampler = ModelSampler {
        posterior: &m.posterior,
        embedding: &m.embedding,
        instance,
        mean_samples,
    };
    let stats = sim_ep(&sampler, cfg.domain, start, pair, fictional, epsilon.value, &cfg.agent, rng)?;
    log::trace!(
        "fictional episode: eps {:.3} reward {:.1} steps {}",
        epsilon.value,
        stats.total_reward,
        stats.steps
    );
    epsilon.end_episode();
    Ok(())
}

/// Double-DQN trained directly on real transitions.
pub fn model_free_run(
    cfg: &ExperimentConfig,
    instance: &EnvInstance,
    global: &mut PrioritizedBuffer,
    rng: &mut SimRng,
    env_rng: &mut SimRng,
) -> Result<RunOutcome> {
    let domain = cfg.domain;
    let mut pair = QNetworkPair::new(
        domain.state_dim(),
        domain.action_count(),
        &cfg.agent.hidden,
        cfg.agent.learning_rate,
        rng,
    )?;
    let mut epsilon = EpsilonSchedule::new(&cfg.agent);
    let mut td = PrioritizedBuffer::new(cfg.replay);
    let mut env = Environment::new(instance.clone());
    let features = |s: &[f64]| domain.policy_features(s);
    let mut results = Vec::new();
    for i in 0..cfg.orchestrator.episodes {
        let clock = Instant::now();
        let mut s = env.reset(env_rng);
        let mut total = 0.0;
        let mut t = 0;
        loop {
            let a = select_action(&pair, &features(&s), epsilon.value, rng)?;
            let r = env.step(a)?;
            total += r.reward;
            let rec = Transition {
                state: s,
                action: a,
                reward: r.reward,
                next_state: r.next_state.clone(),
                done: r.done,
                instance_id: instance.id,
            };
            global.push(rec.clone());
            td.push(rec);
            if t % cfg.agent.update_period == 0 {
                policy_update(&mut pair, &mut td, &cfg.agent, &features, rng)?;
                soft_update(&mut pair, cfg.agent.tau);
            }
            t += 1;
            s = r.next_state;
            if r.done || env.truncated() {
                break;
            }
        }
        epsilon.end_episode();
        results.push(EpisodeResult {
            episode: i + 1,
            total_reward: total,
            steps: t,
            wall_ms: clock.elapsed().as_millis() as u64,
            model_mse: None,
        });
    }
    Ok(RunOutcome {
        results,
        interactions: env.interactions(),
        tunings: 0,
        fictional_episodes: 0,
        model: None,
        pair,
    })
}

/// The held-out instance every variant of `seed` is evaluated on.
pub fn test_instance(cfg: &ExperimentConfig, seed: u64) -> Result<EnvInstance> {
    let mut rng = stream(seed, tags::TEST_INSTANCE);
    let id = cfg.orchestrator.pretrain_instances;
    sample_instance(cfg.domain, id, rng.random(), &cfg.envs)
}

/// One variant on the seed's test instance. Pretrained variants need the
/// pretraining data and the model fitted for their form.
pub fn run_variant(
    cfg: &ExperimentConfig,
    variant: Variant,
    seed: u64,
    pretrained: Option<(&PretrainData, &PretrainedModel)>,
) -> Result<RunOutcome> {
    let instance = test_instance(cfg, seed)?;
    let mut rng = stream(seed, tags::RUN + variant as u64);
    let mut env_rng = stream(seed, tags::ENV_RESET);
    let mut global = match (variant.needs_pretraining(), pretrained) {
        (true, Some((data, _))) => data.global_buffer(cfg.replay),
        (true, None) => {
            return Err(Error::Config(format!("variant `{variant}` needs pretraining checkpoints")));
        }
        (false, _) => PrioritizedBuffer::new(cfg.replay),
    };
    match variant {
        Variant::ModelFree => model_free_run(cfg, &instance, &mut global, &mut rng, &mut env_rng),
        Variant::Scratch => learn_policy(cfg, &instance, None, &mut global, &mut rng, &mut env_rng),
        _ => {
            let (_, model) = pretrained.expect("checked above");
            let form = form_for(variant).expect("model-based variant");
            if model.posterior.layout().form != form {
                return Err(Error::Config(format!(
                    "pretrained model has form {:?}, variant `{variant}` needs {form:?}",
                    model.posterior.layout().form
                )));
            }
            let embedding = if model.posterior.layout().uses_latent() {
                LatentPrior::isotropic(cfg.latent.dim, cfg.latent.prior_variance).sample(&mut rng)
            } else {
                Vec::new()
            };
            let state = ModelState {
                posterior: model.posterior.clone(),
                embedding,
            };
            learn_policy(cfg, &instance, Some(state), &mut global, &mut rng, &mut env_rng)
        }
    }
}
