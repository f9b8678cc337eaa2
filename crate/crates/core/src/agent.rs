//! Double-DQN policy learner with epsilon-greedy exploration and soft
//! target updates.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Domain;
use crate::error::{Error, Result};
use crate::ndcore::checkpoint::{load_params, save_params};
use crate::ndcore::{
    backward_batch, clip_gradient_l2, forward, forward_batch, AdamConfig, AdamState, NetSpec,
    ParamVector,
};
use crate::replay::{PrioritizedBuffer, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub gamma: f64,
    /// Simulated steps between policy updates.
    pub update_period: usize,
    pub tau: f64,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub minibatch: usize,
}

impl PolicyConfig {
    pub fn for_domain(domain: Domain) -> Self {
        Self {
            hidden: vec![256, 512],
            epsilon_start: 1.0,
            epsilon_decay: 0.995,
            gamma: if domain == Domain::Acrobot { 0.99 } else { 0.998 },
            update_period: 10,
            tau: 0.005,
            learning_rate: 5e-4,
            grad_clip: 2.5,
            minibatch: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.epsilon_start)
            && (0.0..=1.0).contains(&self.epsilon_decay)
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && self.tau > 0.0
            && self.tau <= 1.0
            && self.update_period > 0
            && self.minibatch > 0
            && self.learning_rate > 0.0
            && self.grad_clip > 0.0
            && self.hidden.iter().all(|&h| h > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("policy settings out of range".into()))
        }
    }
}

/// Primary and target Q-networks over the same topology.
#[derive(Debug, Clone)]
pub struct QNetworkPair {
    spec: NetSpec,
    pub primary: Vec<f64>,
    pub target: Vec<f64>,
    adam: AdamState,
}

impl QNetworkPair {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        actions: usize,
        hidden: &[usize],
        learning_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(actions);
        let spec = NetSpec::new(widths)?;
        let primary = ParamVector::init_uniform(&spec, rng).into_vec();
        Ok(Self::from_params(spec, primary.clone(), primary, learning_rate))
    }

    pub fn from_params(spec: NetSpec, primary: Vec<f64>, target: Vec<f64>, learning_rate: f64) -> Self {
        let adam = AdamState::new(primary.len(), AdamConfig::with_learning_rate(learning_rate));
        Self {
            spec,
            primary,
            target,
            adam,
        }
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn action_count(&self) -> usize {
        self.spec.output_width()
    }

    pub fn q_values(&self, features: &[f64]) -> Result<Vec<f64>> {
        forward(&self.spec, &self.primary, features)
    }

    pub fn target_q_values(&self, features: &[f64]) -> Result<Vec<f64>> {
        forward(&self.spec, &self.target, features)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let p = ParamVector::from_vec(&self.spec, self.primary.clone())?;
        let t = ParamVector::from_vec(&self.spec, self.target.clone())?;
        save_params(&dir.join("policy_primary.json"), &self.spec, &p, Some("primary"))?;
        save_params(&dir.join("policy_target.json"), &self.spec, &t, Some("target"))
    }

    pub fn load(dir: &Path, learning_rate: f64) -> Result<Self> {
        let (spec, p, role_p) = load_params(&dir.join("policy_primary.json"))?;
        let (spec_t, t, role_t) = load_params(&dir.join("policy_target.json"))?;
        if spec != spec_t || role_p.as_deref() != Some("primary") || role_t.as_deref() != Some("target") {
            return Err(Error::Format {
                path: dir.to_path_buf(),
                message: "policy checkpoints do not form a primary/target pair".into(),
            });
        }
        Ok(Self::from_params(spec, p.into_vec(), t.into_vec(), learning_rate))
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn select_action<R: Rng + ?Sized>(
    pair: &QNetworkPair,
    features: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..pair.action_count()));
    }
    Ok(argmax(&pair.q_values(features)?))
}

/// `r` for terminal transitions, otherwise
/// `r + gamma * Q_target(s', argmax_a Q_primary(s', a))`.
pub fn ddqn_target(pair: &QNetworkPair, reward: f64, next_features: &[f64], done: bool, gamma: f64) -> Result<f64> {
    if done {
        return Ok(reward);
    }
    let a = argmax(&pair.q_values(next_features)?);
    Ok(reward + gamma * pair.target_q_values(next_features)?[a])
}

fn rows(features: &[Vec<f64>]) -> Array2<f64> {
    let w = features.first().map_or(0, Vec::len);
    Array2::from_shape_fn((features.len(), w), |(i, j)| features[i][j])
}

/// Batched Double-DQN targets.
pub fn ddqn_targets(
    pair: &QNetworkPair,
    rewards: &[f64],
    next_features: &[Vec<f64>],
    done: &[bool],
    gamma: f64,
) -> Result<Vec<f64>> {
    let x = rows(next_features);
    let q = forward_batch(&pair.spec, &pair.primary, x.clone())?.into_output();
    let qt = forward_batch(&pair.spec, &pair.target, x)?.into_output();
    Ok((0..rewards.len())
        .map(|i| {
            if done[i] {
                rewards[i]
            } else {
                let a = argmax(q.row(i).as_slice().expect("contiguous row"));
                rewards[i] + gamma * qt[[i, a]]
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct TdLoss {
    pub loss: f64,
    pub gradient: Vec<f64>,
    /// `Q(s, a) - y` per sample.
    pub td_errors: Vec<f64>,
}

/// `(1/B) sum_i w_i (Q(s_i, a_i) - y_i)^2` and its gradient with respect to
/// the primary parameters.
pub fn td_loss(
    spec: &NetSpec,
    params: &[f64],
    features: &[Vec<f64>],
    actions: &[usize],
    targets: &[f64],
    weights: &[f64],
) -> Result<TdLoss> {
    let b = features.len();
    if actions.len() != b || targets.len() != b || weights.len() != b || b == 0 {
        return Err(Error::InvalidArgument("TD batch lengths disagree".into()));
    }
    let tape = forward_batch(spec, params, rows(features))?;
    let q = tape.output();
    let mut out_grad = Array2::<f64>::zeros(q.dim());
    let mut loss = 0.0;
    let mut td_errors = Vec::with_capacity(b);
    for i in 0..b {
        let td = q[[i, actions[i]]] - targets[i];
        loss += weights[i] * td * td / b as f64;
        out_grad[[i, actions[i]]] = 2.0 * weights[i] * td / b as f64;
        td_errors.push(td);
    }
    let mut gradient = vec![0.0; params.len()];
    backward_batch(spec, params, &tape, &out_grad, &mut gradient)?;
    Ok(TdLoss {
        loss,
        gradient,
        td_errors,
    })
}

/// One prioritized minibatch step on the primary network. Returns the
/// absolute TD errors, which also become the sampled records' priorities.
pub fn policy_update<R: Rng + ?Sized>(
    pair: &mut QNetworkPair,
    buffer: &mut PrioritizedBuffer,
    cfg: &PolicyConfig,
    features: &dyn Fn(&[f64]) -> Vec<f64>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let draw = buffer.sample(cfg.minibatch, rng)?;
    let records: Vec<&Transition> = draw.indices.iter().map(|&i| buffer.get(i)).collect();
    let x: Vec<Vec<f64>> = records.iter().map(|r| features(&r.state)).collect();
    let x2: Vec<Vec<f64>> = records.iter().map(|r| features(&r.next_state)).collect();
    let rewards: Vec<f64> = records.iter().map(|r| r.reward).collect();
    let done: Vec<bool> = records.iter().map(|r| r.done).collect();
    let actions: Vec<usize> = records.iter().map(|r| r.action).collect();
    let targets = ddqn_targets(pair, &rewards, &x2, &done, cfg.gamma)?;
    let mut eval = td_loss(&pair.spec, &pair.primary, &x, &actions, &targets, &draw.weights)?;
    if !eval.loss.is_finite() {
        return Err(Error::numerical("TD loss", None));
    }
    clip_gradient_l2(&mut eval.gradient, cfg.grad_clip);
    pair.adam.step(&mut pair.primary, &eval.gradient)?;
    let abs: Vec<f64> = eval.td_errors.iter().map(|e| e.abs()).collect();
    buffer.update_priorities(&draw.indices, &abs)?;
    Ok(abs)
}

/// `target <- tau * primary + (1 - tau) * target`.
pub fn soft_update(pair: &mut QNetworkPair, tau: f64) {
    if tau == 1.0 {
        pair.target.copy_from_slice(&pair.primary);
        return;
    }
    for (t, p) in pair.target.iter_mut().zip(&pair.primary) {
        *t = tau * p + (1.0 - tau) * *t;
    }
}

/// Multiplicative per-episode epsilon decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub value: f64,
    pub decay: f64,
}

impl EpsilonSchedule {
    pub fn new(cfg: &PolicyConfig) -> Self {
        Self {
            value: cfg.epsilon_start,
            decay: cfg.epsilon_decay,
        }
    }

    pub fn end_episode(&mut self) {
        self.value *= self.decay;
    }
}
