//! Experiment configuration: per-domain defaults, JSON files and dotted-key
//! overrides such as `bnn.alpha=0.45`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::agent::PolicyConfig;
use crate::bnn::{AlphaConfig, PosteriorInit, PriorSchedule};
use crate::envs::{hiv, Domain, EnvConfig};
use crate::error::{Error, Result};
use crate::latent::LatentConfig;
use crate::replay::ReplayConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Embedded,
    Linear,
    Scratch,
    Average,
    ModelFree,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Embedded,
        Variant::Linear,
        Variant::Scratch,
        Variant::Average,
        Variant::ModelFree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Embedded => "embedded",
            Variant::Linear => "linear",
            Variant::Scratch => "scratch",
            Variant::Average => "average",
            Variant::ModelFree => "model_free",
        }
    }

    pub fn needs_pretraining(self) -> bool {
        matches!(self, Variant::Embedded | Variant::Linear | Variant::Average)
    }

    pub fn is_model_based(self) -> bool {
        self != Variant::ModelFree
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnnConfig {
    pub hidden: Vec<usize>,
    #[serde(flatten)]
    pub training: AlphaConfig,
    #[serde(flatten)]
    pub init: PosteriorInit,
    pub prior: PriorSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSettings {
    pub dim: usize,
    pub prior_variance: f64,
    #[serde(flatten)]
    pub update: LatentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    /// Real episodes on the new instance.
    pub episodes: usize,
    /// Simulated episodes after each model tuning.
    pub fictional_episodes: usize,
    /// Retune when episode MSE exceeds this multiple of the post-tune MSE.
    pub retune_factor: f64,
    /// Roll out the predictive mean instead of single posterior draws.
    pub mean_rollouts: bool,
    pub pretrain_instances: usize,
    pub pretrain_episodes: usize,
    pub pretrain_passes: usize,
    pub pretrain_epsilon_start: f64,
    pub pretrain_epsilon_end: f64,
    /// When set, every run seed reuses the pretraining produced with this
    /// seed instead of its own.
    pub pretrain_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    /// Cells per axis of the visit histogram used by the uncertainty demo.
    pub demo_grid_cells: usize,
    /// Side of the square regions compared by the uncertainty demo.
    pub demo_region_size: f64,
    /// Evaluation points per axis inside each region.
    pub demo_points: usize,
    pub bench_instances: usize,
    pub bench_episodes: usize,
    pub bench_update_every: usize,
    pub compare_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub domain: Domain,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub out_dir: PathBuf,
    pub envs: EnvConfig,
    pub bnn: BnnConfig,
    pub latent: LatentSettings,
    pub agent: PolicyConfig,
    pub replay: ReplayConfig,
    pub orchestrator: OrchestratorConfig,
    pub harness: HarnessConfig,
}

impl ExperimentConfig {
    pub fn defaults(domain: Domain) -> Self {
        let (hidden, instances) = match domain {
            Domain::Nav2d => (vec![25, 25, 25], 2),
            Domain::Acrobot => (vec![32, 32], 8),
            Domain::Hiv => (vec![32, 32], 5),
        };
        Self {
            domain,
            seeds: vec![0, 1, 2, 3, 4],
            variants: Variant::ALL.to_vec(),
            out_dir: PathBuf::from("out"),
            envs: EnvConfig::default(),
            bnn: BnnConfig {
                hidden,
                training: AlphaConfig::for_domain(domain),
                init: PosteriorInit::default(),
                prior: PriorSchedule::default(),
            },
            latent: LatentSettings {
                dim: 5,
                prior_variance: 0.1,
                update: LatentConfig::default(),
            },
            agent: PolicyConfig::for_domain(domain),
            replay: ReplayConfig::default(),
            orchestrator: OrchestratorConfig {
                episodes: 10,
                fictional_episodes: 500,
                retune_factor: 2.0,
                mean_rollouts: false,
                pretrain_instances: instances,
                pretrain_episodes: 500,
                pretrain_passes: 20,
                pretrain_epsilon_start: 1.0,
                pretrain_epsilon_end: 0.1,
                pretrain_seed: None,
            },
            harness: HarnessConfig {
                demo_grid_cells: 20,
                demo_region_size: 0.4,
                demo_points: 9,
                bench_instances: 6,
                bench_episodes: 50,
                bench_update_every: 10,
                compare_episodes: 10,
            },
        }
    }

    /// Domain defaults, then the JSON file (if any), then dotted overrides.
    /// The domain is chosen by a `domain` override, else the explicit
    /// argument, else the file, else nav2d.
    pub fn resolve(domain: Option<Domain>, file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let file_value = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let v: Value = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                if !v.is_object() {
                    return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
                }
                Some(v)
            }
            None => None,
        };
        let file_domain = file_value
            .as_ref()
            .and_then(|v| v.get("domain"))
            .and_then(Value::as_str)
            .map(str::parse::<Domain>)
            .transpose()?;
        let override_domain = overrides
            .iter()
            .find(|(k, _)| k == "domain")
            .map(|(_, v)| v.parse::<Domain>())
            .transpose()?;
        let domain = override_domain.or(domain).or(file_domain).unwrap_or(Domain::Nav2d);

        let mut value = serde_json::to_value(Self::defaults(domain)).expect("config serializes");
        if let Some(file_value) = file_value {
            merge(&mut value, &file_value, "")?;
        }
        for (key, raw) in overrides {
            set_dotted(&mut value, key, raw)?;
        }
        value["domain"] = Value::String(domain.name().to_owned());
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.bnn.training.validate()?;
        self.agent.validate()?;
        let o = &self.orchestrator;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.bnn.hidden.is_empty() || self.bnn.hidden.contains(&0) {
            return Err(Error::Config("bnn.hidden must list positive widths".into()));
        }
        if self.latent.dim == 0 || !(self.latent.prior_variance >= 0.0) {
            return Err(Error::Config("latent.dim must be positive, prior variance non-negative".into()));
        }
        if o.pretrain_instances == 0 || !(o.retune_factor > 0.0) {
            return Err(Error::Config("orchestrator counts out of range".into()));
        }
        if self.replay.priority_exponent < 0.0 || self.replay.importance_exponent < 0.0 {
            return Err(Error::Config("replay exponents must be non-negative".into()));
        }
        Ok(())
    }

    /// Seed whose pretraining a run with `seed` uses.
    pub fn pretrain_seed_for(&self, seed: u64) -> u64 {
        self.orchestrator.pretrain_seed.unwrap_or(seed)
    }
}

fn merge(base: &mut Value, patch: &Value, prefix: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                let slot = b
                    .get_mut(k)
                    .ok_or_else(|| Error::Config(format!("unknown config key `{path}`")))?;
                if slot.is_object() && v.is_object() {
                    merge(slot, v, &path)?;
                } else {
                    *slot = v.clone();
                }
            }
            Ok(())
        }
        _ => Err(Error::Config(format!("`{prefix}` must be an object"))),
    }
}

/// Sets `a.b.c` to `raw`, parsed as JSON when possible and as a string
/// otherwise.
pub fn set_dotted(value: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut slot = value;
    for part in key.split('.') {
        slot = slot
            .get_mut(part)
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    Ok(())
}

/// Hash over every constant table the simulators depend on.
pub fn constants_hash() -> String {
    use crate::envs::{acrobot, nav2d};
    let mut h = Sha256::new();
    h.update(hiv::TABLE_VERSION.as_bytes());
    for (name, v) in hiv::BASELINE.iter() {
        h.update(name.as_bytes());
        h.update(v.to_le_bytes());
    }
    let scalars = [
        hiv::DAYS_PER_STEP,
        nav2d::STEP_SIZE,
        nav2d::WIND,
        nav2d::BOUND,
        nav2d::GOAL_MIN,
        nav2d::GOAL_MAX,
        nav2d::START_MIN,
        nav2d::START_MAX,
        nav2d::STEP_COST,
        nav2d::WALL_PENALTY,
        nav2d::GOAL_REWARD,
        acrobot::LC1,
        acrobot::LC2,
        acrobot::I1,
        acrobot::I2,
        acrobot::GRAVITY,
        acrobot::MAX_VEL_1,
        acrobot::MAX_VEL_2,
        acrobot::DT,
        acrobot::GOAL_REWARD,
    ];
    for v in hiv::INITIAL_STATE.iter().chain(acrobot::TORQUES.iter()).chain(scalars.iter()) {
        h.update(v.to_le_bytes());
    }
    for n in [
        nav2d::STEP_CAP,
        acrobot::STEP_CAP,
        acrobot::SUBSTEPS,
        hiv::STEP_CAP,
    ] {
        h.update((n as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}
