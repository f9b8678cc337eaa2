//! Simulated task families: 2-D navigation, acrobot and HIV treatment.
//!
//! An [`EnvInstance`] fixes the hidden parameters of one task. States are
//! plain `Vec<f64>`; each step function is pure given state, action and
//! instance.

pub mod acrobot;
pub mod hiv;
pub mod integrate;
pub mod nav2d;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use acrobot::AcrobotParams;
pub use hiv::HivParams;
pub use integrate::rk4_step;

use crate::error::{Error, Result};
use crate::rng::{normal, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Nav2d,
    Acrobot,
    Hiv,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Nav2d, Domain::Acrobot, Domain::Hiv];

    pub fn state_dim(self) -> usize {
        match self {
            Domain::Nav2d => 2,
            Domain::Acrobot => 4,
            Domain::Hiv => 6,
        }
    }

    pub fn action_count(self) -> usize {
        match self {
            Domain::Nav2d => 4,
            Domain::Acrobot => 3,
            Domain::Hiv => 4,
        }
    }

    pub fn step_cap(self) -> usize {
        match self {
            Domain::Nav2d => nav2d::STEP_CAP,
            Domain::Acrobot => acrobot::STEP_CAP,
            Domain::Hiv => hiv::STEP_CAP,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Nav2d => "nav2d",
            Domain::Acrobot => "acrobot",
            Domain::Hiv => "hiv",
        }
    }

    /// `s2 - s`, with angular components wrapped into `(-pi, pi]`.
    pub fn state_delta(self, s: &[f64], s2: &[f64]) -> Vec<f64> {
        let mut d: Vec<f64> = s2.iter().zip(s).map(|(b, a)| b - a).collect();
        if self == Domain::Acrobot {
            d[0] = acrobot::wrap_angle(d[0]);
            d[1] = acrobot::wrap_angle(d[1]);
        }
        d
    }

    /// Scaled state fed to the Q-network.
    pub fn policy_features(self, s: &[f64]) -> Vec<f64> {
        use std::f64::consts::PI;
        match self {
            Domain::Nav2d => s.to_vec(),
            Domain::Acrobot => vec![
                s[0] / PI,
                s[1] / PI,
                s[2] / acrobot::MAX_VEL_1,
                s[3] / acrobot::MAX_VEL_2,
            ],
            Domain::Hiv => s.iter().map(|v| (1.0 + v.max(0.0)).log10() / 5.0).collect(),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nav2d" => Ok(Domain::Nav2d),
            "acrobot" => Ok(Domain::Acrobot),
            "hiv" => Ok(Domain::Hiv),
            other => Err(Error::Config(format!("unknown domain `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HiddenParams {
    Nav2d { class: u8 },
    Acrobot(AcrobotParams),
    Hiv(HivParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Standard deviation of the additive acrobot parameter noise.
    pub acrobot_param_std: f64,
    /// Perturbed acrobot parameters at or below this are redrawn.
    pub acrobot_param_floor: f64,
    pub acrobot_reset_noise: f64,
    /// HIV noise standard deviation as a fraction of each baseline value.
    pub hiv_relative_std: f64,
    pub hiv_eps1: f64,
    pub hiv_eps2: f64,
    pub hiv_substeps: usize,
    pub instance_attempts: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            acrobot_param_std: 0.5,
            acrobot_param_floor: 0.1,
            acrobot_reset_noise: 0.1,
            hiv_relative_std: 0.25,
            hiv_eps1: 0.7,
            hiv_eps2: 0.3,
            hiv_substeps: hiv::DEFAULT_SUBSTEPS,
            instance_attempts: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub wall_hit: bool,
}

/// One member of a task family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvInstance {
    pub id: usize,
    pub domain: Domain,
    pub params: HiddenParams,
    pub seed: u64,
    pub reset_noise: f64,
    pub substeps: usize,
}

impl EnvInstance {
    /// The unperturbed instance of a domain (nav2d class 0).
    pub fn nominal(domain: Domain, id: usize, cfg: &EnvConfig) -> Self {
        let params = match domain {
            Domain::Nav2d => HiddenParams::Nav2d { class: 0 },
            Domain::Acrobot => HiddenParams::Acrobot(AcrobotParams::default()),
            Domain::Hiv => {
                let mut p = HivParams::default();
                p.values[2] = cfg.hiv_eps1;
                p.values[11] = cfg.hiv_eps2;
                HiddenParams::Hiv(p)
            }
        };
        Self {
            id,
            domain,
            params,
            seed: 0,
            reset_noise: cfg.acrobot_reset_noise,
            substeps: cfg.hiv_substeps,
        }
    }

    pub fn nav2d_class(&self) -> Option<u8> {
        match self.params {
            HiddenParams::Nav2d { class } => Some(class),
            _ => None,
        }
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.domain {
            Domain::Nav2d => nav2d::reset(rng),
            Domain::Acrobot => acrobot::reset(rng, self.reset_noise),
            Domain::Hiv => hiv::INITIAL_STATE.to_vec(),
        }
    }

    /// True dynamics. `done` reports terminal states only; episode caps are
    /// enforced by [`Environment`].
    pub fn step(&self, state: &[f64], action: usize) -> Result<StepResult> {
        if state.len() != self.domain.state_dim() || action >= self.domain.action_count() {
            return Err(Error::InvalidArgument(format!(
                "{} step got state of length {} and action {}",
                self.domain,
                state.len(),
                action
            )));
        }
        match &self.params {
            HiddenParams::Nav2d { class } => Ok(nav2d::step(state, action, *class)),
            HiddenParams::Acrobot(p) => acrobot::step(state, action, p),
            HiddenParams::Hiv(p) => hiv::step(state, action, p, self.substeps),
        }
    }

    /// Applies domain constraints and the known reward function to a
    /// model-predicted next state.
    pub fn resolve_model_step(&self, state: &[f64], action: usize, predicted: &[f64]) -> StepResult {
        match &self.params {
            HiddenParams::Nav2d { class } => {
                nav2d::resolve(state, (predicted[0], predicted[1]), *class)
            }
            HiddenParams::Acrobot(p) => {
                let mut next = predicted.to_vec();
                acrobot::constrain(&mut next);
                let (reward, done) = acrobot::reward(&next, p);
                StepResult {
                    next_state: next,
                    reward,
                    done,
                    wall_hit: false,
                }
            }
            HiddenParams::Hiv(p) => {
                let next: Vec<f64> = predicted.iter().map(|v| v.max(0.0)).collect();
                let reward = hiv::reward(&next, action, p);
                StepResult {
                    next_state: next,
                    reward,
                    done: false,
                    wall_hit: false,
                }
            }
        }
    }
}

/// Draws the hidden parameters of a new task instance.
pub fn sample_instance(domain: Domain, id: usize, seed: u64, cfg: &EnvConfig) -> Result<EnvInstance> {
    let mut rng = seeded(seed);
    let mut inst = EnvInstance::nominal(domain, id, cfg);
    inst.seed = seed;
    match domain {
        Domain::Nav2d => {
            inst.params = HiddenParams::Nav2d {
                class: u8::from(rng.random_bool(0.5)),
            };
        }
        Domain::Acrobot => {
            let mut draw = || -> Result<f64> {
                for _ in 0..cfg.instance_attempts {
                    let v = 1.0 + cfg.acrobot_param_std * normal(&mut rng);
                    if v > cfg.acrobot_param_floor {
                        return Ok(v);
                    }
                }
                Err(Error::InstanceGeneration(
                    "acrobot parameter stayed below the floor".into(),
                ))
            };
            inst.params = HiddenParams::Acrobot(AcrobotParams {
                l1: draw()?,
                l2: draw()?,
                m1: draw()?,
                m2: draw()?,
            });
        }
        Domain::Hiv => {
            let base = match &inst.params {
                HiddenParams::Hiv(p) => p.clone(),
                _ => unreachable!(),
            };
            let mut accepted = None;
            for _ in 0..cfg.instance_attempts {
                let mut p = base.clone();
                for (i, v) in p.values.iter_mut().enumerate() {
                    if hiv::is_physiological(i) {
                        *v *= 1.0 + cfg.hiv_relative_std * normal(&mut rng);
                    }
                }
                if p.values.iter().all(|v| *v > 0.0) && hiv::passes_stability_filter(&p, cfg.hiv_substeps)
                {
                    accepted = Some(p);
                    break;
                }
            }
            let p = accepted.ok_or_else(|| {
                Error::InstanceGeneration(format!(
                    "no stable HIV instance after {} attempts",
                    cfg.instance_attempts
                ))
            })?;
            inst.params = HiddenParams::Hiv(p);
        }
    }
    Ok(inst)
}

/// A live episode against the true dynamics. Counts every interaction.
///
/// `done` in a step result marks terminal states only; running into the
/// step cap is reported by [`Environment::truncated`].
#[derive(Debug, Clone)]
pub struct Environment {
    instance: EnvInstance,
    state: Vec<f64>,
    t: usize,
    interactions: u64,
}

impl Environment {
    pub fn new(instance: EnvInstance) -> Self {
        let dim = instance.domain.state_dim();
        Self {
            instance,
            state: vec![0.0; dim],
            t: 0,
            interactions: 0,
        }
    }

    pub fn instance(&self) -> &EnvInstance {
        &self.instance
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }

    pub fn interactions(&self) -> u64 {
        self.interactions
    }

    /// True once the episode has used its full step budget.
    pub fn truncated(&self) -> bool {
        self.t >= self.instance.domain.step_cap()
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.state = self.instance.reset(rng);
        self.t = 0;
        self.state.clone()
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        let cap = self.instance.domain.step_cap();
        if self.t >= cap {
            return Err(Error::InvalidState("episode already reached its step cap".into()));
        }
        let r = self.instance.step(&self.state, action)?;
        self.t += 1;
        self.interactions += 1;
        self.state = r.next_state.clone();
        Ok(r)
    }
}
