use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::results::write_versioned;
use super::{domain_dir, load_pretrained_model, write_manifest};
use crate::agent::{select_action, EpsilonSchedule, QNetworkPair};
use crate::bnn::ModelForm;
use crate::config::ExperimentConfig;
use crate::envs::{sample_instance, Domain, Environment};
use crate::error::{Error, Result};
use crate::latent::{tune_model, LatentPrior};
use crate::orchestrator::{sim_ep, tags, ModelSampler};
use crate::replay::{PrioritizedBuffer, Transition};
use crate::rng::{child_seed, stream};

pub const BENCH_SCHEMA: &str = "hipmdp-bench/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub run_id: String,
    pub seed: u64,
    pub instance: usize,
    pub episode: usize,
    /// Position of the episode in the whole run, from zero.
    pub index: usize,
    pub updated: bool,
    pub steps: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub mean_ms: f64,
    /// Fitted change in episode time from the first to the last episode,
    /// as a fraction of the mean.
    pub relative_drift: f64,
    pub mean_update_ms: f64,
    pub mean_plain_ms: f64,
}

/// Ordinary least squares of `times` against their index; returns the
/// fitted change over the whole series divided by the mean.
pub fn drift_statistic(times: &[f64]) -> f64 {
    let n = times.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mean_x = (nf - 1.0) / 2.0;
    let mean_y = times.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in times.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    slope * (nf - 1.0) / mean_y
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn bench_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<BenchRow>, BenchReport)> {
    let h = &cfg.harness;
    let mut model = load_pretrained_model(cfg, cfg.pretrain_seed_for(seed), ModelForm::Embedded, "bench-scaling")?;
    let mut rng = stream(seed, tags::BENCH);
    let latent_prior = LatentPrior::isotropic(cfg.latent.dim, cfg.latent.prior_variance);
    let features = |s: &[f64]| cfg.domain.policy_features(s);
    let mut rows = Vec::with_capacity(h.bench_instances * h.bench_episodes);
    let mut index = 0;
    for k in 0..h.bench_instances {
        let id = cfg.orchestrator.pretrain_instances + 1 + k;
        let instance = sample_instance(cfg.domain, id, child_seed(&mut rng), &cfg.envs)?;
        let mut env = Environment::new(instance.clone());
        let mut embedding = latent_prior.sample(&mut rng);
        let mut pair = QNetworkPair::new(
            cfg.domain.state_dim(),
            cfg.domain.action_count(),
            &cfg.agent.hidden,
            cfg.agent.learning_rate,
            &mut rng,
        )?;
        let mut epsilon = EpsilonSchedule::new(&cfg.agent);
        let mut instance_buf = PrioritizedBuffer::new(cfg.replay);
        let mut fictional = PrioritizedBuffer::new(cfg.replay);
        for ep in 0..h.bench_episodes {
            let clock = Instant::now();
            let start = env.reset(&mut rng);
            let mut s = start.clone();
            let mut steps = 0;
            loop {
                let a = select_action(&pair, &features(&s), epsilon.value, &mut rng)?;
                let r = env.step(a)?;
                instance_buf.push(Transition {
                    state: s,
                    action: a,
                    reward: r.reward,
                    next_state: r.next_state.clone(),
                    done: r.done,
                    instance_id: id,
                });
                steps += 1;
                s = r.next_state;
                if r.done || env.truncated() {
                    break;
                }
            }
            let updated = (ep + 1) % h.bench_update_every.max(1) == 0;
            if updated {
                tune_model(
                    &mut embedding,
                    &mut model.posterior,
                    &mut instance_buf,
                    &cfg.latent.update,
                    &cfg.bnn.training,
                    &mut rng,
                )?;
            }
            let sampler = ModelSampler {
                posterior: &model.posterior,
                embedding: &embedding,
                instance: &instance,
                mean_samples: None,
            };
            sim_ep(&sampler, cfg.domain, &start, &mut pair, &mut fictional, epsilon.value, &cfg.agent, &mut rng)?;
            epsilon.end_episode();
            rows.push(BenchRow {
                run_id: format!("bench-{seed}"),
                seed,
                instance: k,
                episode: ep + 1,
                index,
                updated,
                steps,
                wall_ms: clock.elapsed().as_millis() as u64,
            });
            index += 1;
        }
    }
    let times: Vec<f64> = rows.iter().map(|r| r.wall_ms as f64).collect();
    let report = BenchReport {
        seed,
        mean_ms: mean(times.iter().copied()),
        relative_drift: drift_statistic(&times),
        mean_update_ms: mean(rows.iter().filter(|r| r.updated).map(|r| r.wall_ms as f64)),
        mean_plain_ms: mean(rows.iter().filter(|r| !r.updated).map(|r| r.wall_ms as f64)),
    };
    Ok((rows, report))
}

/// Times real episodes on a stream of new instances, each followed by one
/// fictional episode, with model tuning on every `bench_update_every`-th.
pub fn cmd_bench_scaling(cfg: &ExperimentConfig) -> Result<Vec<BenchReport>> {
    if cfg.domain != Domain::Nav2d {
        return Err(Error::Config("bench-scaling runs on the nav2d domain".into()));
    }
    let dir = domain_dir(cfg);
    write_manifest(&dir, "bench-manifest.json", cfg)?;
    let mut all = Vec::new();
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let (rows, report) = bench_seed(cfg, seed)?;
        log::info!(
            "seed {seed}: mean {:.1} ms, drift {:.3}, update {:.1} ms, plain {:.1} ms",
            report.mean_ms,
            report.relative_drift,
            report.mean_update_ms,
            report.mean_plain_ms
        );
        all.extend(rows);
        reports.push(report);
    }
    write_versioned(&dir.join("bench_scaling.csv"), BENCH_SCHEMA, &all)?;
    Ok(reports)
}
