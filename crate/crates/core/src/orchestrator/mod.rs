//! The transfer-learning loop: pretraining on earlier instances, policy
//! learning on a new one, and the four baselines.

pub(crate) mod learn;
mod pretrain;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use learn::{
    episode_mse, learn_policy, model_free_run, retune_trigger, run_variant, sim_ep, test_instance, ModelSampler,
    ModelState, RunOutcome, SimEpStats, TransitionModel,
};
pub use pretrain::{collect_pretraining_data, fit_pretrained, form_for, pretrain_batch, PretrainData, PretrainedModel};

use crate::bnn::WeightPosterior;
use crate::error::Result;
use crate::ndcore::checkpoint::{read_json, write_json};

/// Stream tags separating the random sources of one seed.
pub(crate) mod tags {
    pub const PRETRAIN_DATA: u64 = 1;
    pub const PRETRAIN_FIT: u64 = 2;
    pub const TEST_INSTANCE: u64 = 3;
    pub const ENV_RESET: u64 = 4;
    pub const RUN: u64 = 16;
    pub const DEMO: u64 = 32;
    pub const BENCH: u64 = 33;
    pub const COMPARE: u64 = 34;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// One-based episode index on the new instance.
    pub episode: usize,
    pub total_reward: f64,
    pub steps: usize,
    pub wall_ms: u64,
    /// Mean squared one-step error of the model held before this episode,
    /// in model coordinates.
    pub model_mse: Option<f64>,
}

impl PretrainedModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
        self.posterior.save(&dir.join("posterior.json"))?;
        write_json(&dir.join("embeddings.json"), &self.embeddings)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            posterior: WeightPosterior::load(&dir.join("posterior.json"))?,
            embeddings: read_json(&dir.join("embeddings.json"))?,
        })
    }
}
