#![allow(dead_code)]

pub mod oracles;

use std::path::Path;

use hipmdp::config::ExperimentConfig;
use hipmdp::envs::Domain;

/// A configuration small enough for a whole pipeline to run in seconds.
pub fn tiny(domain: Domain, out: &Path) -> ExperimentConfig {
    let pairs: &[(&str, &str)] = &[
        ("bnn.hidden", "[6, 6]"),
        ("bnn.epochs", "2"),
        ("bnn.draw_size", "16"),
        ("bnn.minibatch", "8"),
        ("bnn.mc_samples", "3"),
        ("bnn.predict_samples", "4"),
        ("latent.steps", "3"),
        ("latent.minibatch", "8"),
        ("agent.hidden", "[8]"),
        ("agent.minibatch", "8"),
        ("orchestrator.episodes", "2"),
        ("orchestrator.fictional_episodes", "2"),
        ("orchestrator.pretrain_episodes", "3"),
        ("orchestrator.pretrain_passes", "2"),
        ("envs.hiv_substeps", "20"),
        ("harness.demo_points", "2"),
        ("harness.bench_instances", "2"),
        ("harness.bench_episodes", "4"),
        ("harness.bench_update_every", "2"),
        ("harness.compare_episodes", "2"),
        ("seeds", "[0, 1]"),
    ];
    let mut overrides: Vec<(String, String)> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    overrides.push(("out_dir".into(), serde_json::to_string(out).unwrap()));
    ExperimentConfig::resolve(Some(domain), None, &overrides).unwrap()
}
