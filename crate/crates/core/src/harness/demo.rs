use serde::{Deserialize, Serialize};

use super::{domain_dir, load_pretrain_data, load_pretrained_model, write_manifest};
use crate::bnn::{ModelForm, WeightPosterior};
use crate::config::ExperimentConfig;
use crate::envs::{nav2d, Domain};
use crate::error::{Error, Result};
use crate::ndcore::checkpoint::write_json;
use crate::orchestrator::tags;
use crate::replay::PrioritizedBuffer;
use crate::rng::{stream, SimRng};

/// Action index of the east heading.
const EAST: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub center: [f64; 2],
    pub mean_std: f64,
}

/// Uncertainty contrast under one instance's latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentContrast {
    pub explored_for_red: RegionStats,
    pub unexplored_for_red: RegionStats,
    /// Unexplored-for-red mean std over explored-for-red mean std.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedDemo {
    pub seed: u64,
    /// Whether the explored region was found among cells only red visited.
    pub red_only_cell: bool,
    pub noise_std: f64,
    pub red: LatentContrast,
    pub blue: LatentContrast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub seeds: Vec<SeedDemo>,
}

struct Histogram {
    cells: usize,
    counts: Vec<u64>,
}

impl Histogram {
    fn of(buffer: &PrioritizedBuffer, cells: usize) -> Self {
        let mut counts = vec![0; cells * cells];
        for r in buffer.records() {
            counts[Self::cell_index(&r.state, cells)] += 1;
        }
        Self { cells, counts }
    }

    fn cell_index(s: &[f64], cells: usize) -> usize {
        let axis = |v: f64| {
            let u = (v + nav2d::BOUND) / (2.0 * nav2d::BOUND);
            ((u * cells as f64).floor() as isize).clamp(0, cells as isize - 1) as usize
        };
        axis(s[1]) * cells + axis(s[0])
    }

    fn center(&self, index: usize) -> [f64; 2] {
        let width = 2.0 * nav2d::BOUND / self.cells as f64;
        let (row, col) = (index / self.cells, index % self.cells);
        [
            -nav2d::BOUND + (col as f64 + 0.5) * width,
            -nav2d::BOUND + (row as f64 + 0.5) * width,
        ]
    }

    /// Densest cell among those `keep` accepts; ties go to the lowest index.
    fn densest(&self, keep: impl Fn(usize) -> bool) -> Option<usize> {
        (0..self.counts.len())
            .filter(|&i| keep(i) && self.counts[i] > 0)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if self.counts[b] >= self.counts[i] => Some(b),
                _ => Some(i),
            })
    }
}

fn region_std(
    post: &WeightPosterior,
    latent: &[f64],
    center: [f64; 2],
    cfg: &ExperimentConfig,
    rng: &mut SimRng,
) -> Result<f64> {
    let h = &cfg.harness;
    let n = h.demo_points.max(1);
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let offset = |k: usize| {
                if n == 1 {
                    0.0
                } else {
                    h.demo_region_size * (k as f64 / (n - 1) as f64 - 0.5)
                }
            };
            let s = [center[0] + offset(i), center[1] + offset(j)];
            let p = post.predict(&s, EAST, latent, rng, cfg.bnn.training.predict_samples)?;
            total += p.variance.iter().map(|v| v.sqrt()).sum::<f64>() / p.variance.len() as f64;
        }
    }
    Ok(total / (n * n) as f64)
}

fn contrast(
    post: &WeightPosterior,
    latent: &[f64],
    explored: [f64; 2],
    unexplored: [f64; 2],
    cfg: &ExperimentConfig,
    rng: &mut SimRng,
) -> Result<LatentContrast> {
    let e = region_std(post, latent, explored, cfg, rng)?;
    let u = region_std(post, latent, unexplored, cfg, rng)?;
    Ok(LatentContrast {
        explored_for_red: RegionStats {
            center: explored,
            mean_std: e,
        },
        unexplored_for_red: RegionStats {
            center: unexplored,
            mean_std: u,
        },
        ratio: u / e,
    })
}

fn demo_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedDemo> {
    let ps = cfg.pretrain_seed_for(seed);
    let what = "demo-uncertainty";
    let data = load_pretrain_data(cfg, ps, what)?;
    let model = load_pretrained_model(cfg, ps, ModelForm::Embedded, what)?;
    let find = |class: u8| data.instances.iter().position(|inst| inst.nav2d_class() == Some(class));
    let (red, blue) = match (find(0), find(1)) {
        (Some(r), Some(b)) => (r, b),
        _ => {
            return Err(Error::Config(
                "demo-uncertainty needs one red and one blue pretraining instance".into(),
            ))
        }
    };
    let cells = cfg.harness.demo_grid_cells;
    let red_hist = Histogram::of(&data.buffers[red], cells);
    let blue_hist = Histogram::of(&data.buffers[blue], cells);

    let red_only = red_hist.densest(|i| blue_hist.counts[i] == 0);
    let explored = red_only
        .or_else(|| red_hist.densest(|_| true))
        .ok_or_else(|| Error::InvalidState("red pretraining buffer is empty".into()))?;
    let unexplored = blue_hist
        .densest(|i| red_hist.counts[i] == 0)
        .ok_or_else(|| Error::InvalidState("no cell visited by blue but not red".into()))?;
    let (ce, cu) = (red_hist.center(explored), red_hist.center(unexplored));

    let mut rng = stream(seed, tags::DEMO);
    let post = &model.posterior;
    let red_c = contrast(post, &model.embeddings[red], ce, cu, cfg, &mut rng)?;
    let blue_c = contrast(post, &model.embeddings[blue], ce, cu, cfg, &mut rng)?;
    let noise = post.noise_log_variance();
    Ok(SeedDemo {
        seed,
        red_only_cell: red_only.is_some(),
        noise_std: noise.iter().map(|v| (0.5 * v).exp()).sum::<f64>() / noise.len() as f64,
        red: red_c,
        blue: blue_c,
    })
}

/// Compares the predictive spread of the east action under the red latent
/// in a region red visited against one only blue visited.
pub fn cmd_demo_uncertainty(cfg: &ExperimentConfig) -> Result<DemoReport> {
    if cfg.domain != Domain::Nav2d {
        return Err(Error::Config("demo-uncertainty runs on the nav2d domain".into()));
    }
    let dir = domain_dir(cfg);
    write_manifest(&dir, "demo-manifest.json", cfg)?;
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let d = demo_seed(cfg, seed)?;
        log::info!("seed {seed}: std ratio {:.3} (blue latent {:.3})", d.red.ratio, d.blue.ratio);
        seeds.push(d);
    }
    let report = DemoReport { seeds };
    write_json(&dir.join("demo_uncertainty.json"), &report)?;
    Ok(report)
}
