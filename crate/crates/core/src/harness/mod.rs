//! Command implementations behind the `hipmdp` binary: pretraining
//! checkpoints, the variant grid, and the three studies.

mod bench;
mod compare;
mod demo;
mod results;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use bench::{cmd_bench_scaling, drift_statistic, BenchReport, BenchRow};
pub use compare::{cmd_compare_models, CompareRow};
pub use demo::{cmd_demo_uncertainty, DemoReport, RegionStats, SeedDemo};
pub use results::{read_results, ResultRow, RESULTS_SCHEMA};

use crate::bnn::ModelForm;
use crate::config::{constants_hash, ExperimentConfig, Variant};
use crate::error::{Error, Result};
use crate::ndcore::checkpoint::{read_json, write_json};
use crate::orchestrator::{collect_pretraining_data, fit_pretrained, form_for, run_variant, PretrainData, PretrainedModel};

/// Everything needed to reproduce an output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub constants_hash: String,
    pub pretrain_fingerprint: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            constants_hash: constants_hash(),
            pretrain_fingerprint: pretrain_fingerprint(cfg),
            config: cfg.clone(),
        }
    }
}

/// Root of all outputs for the configured domain.
pub fn domain_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join(cfg.domain.name())
}

pub fn pretrain_dir(cfg: &ExperimentConfig, pretrain_seed: u64) -> PathBuf {
    domain_dir(cfg).join("pretrain").join(format!("seed-{pretrain_seed}"))
}

fn form_dir(form: ModelForm) -> &'static str {
    match form {
        ModelForm::Embedded => "embedded",
        ModelForm::Linear => "linear",
        ModelForm::Plain => "average",
    }
}

pub fn model_dir(cfg: &ExperimentConfig, pretrain_seed: u64, form: ModelForm) -> PathBuf {
    pretrain_dir(cfg, pretrain_seed).join("models").join(form_dir(form))
}

/// Hash of the settings that pretraining outputs depend on. Checkpoints
/// written under a different fingerprint are refused.
pub fn pretrain_fingerprint(cfg: &ExperimentConfig) -> String {
    let o = &cfg.orchestrator;
    let relevant = serde_json::json!({
        "domain": cfg.domain,
        "envs": cfg.envs,
        "bnn": cfg.bnn,
        "latent": cfg.latent,
        "agent": cfg.agent,
        "replay": cfg.replay,
        "instances": o.pretrain_instances,
        "episodes": o.pretrain_episodes,
        "passes": o.pretrain_passes,
        "epsilon": [o.pretrain_epsilon_start, o.pretrain_epsilon_end],
        "constants": constants_hash(),
    });
    hex::encode(Sha256::digest(relevant.to_string().as_bytes()))
}

fn write_manifest(dir: &Path, name: &str, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(name), &Manifest::new(name.trim_end_matches(".json"), cfg))
}

/// Model forms the configured variants need from pretraining.
pub fn required_forms(variants: &[Variant]) -> Vec<ModelForm> {
    let mut forms = Vec::new();
    for v in variants.iter().filter(|v| v.needs_pretraining()) {
        let form = form_for(*v).expect("pretrained variants have a model");
        if !forms.contains(&form) {
            forms.push(form);
        }
    }
    forms
}

/// Distinct pretraining seeds used by the configured run seeds.
pub fn pretrain_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    let set: BTreeSet<u64> = cfg.seeds.iter().map(|&s| cfg.pretrain_seed_for(s)).collect();
    set.into_iter().collect()
}

/// Collects pretraining data and fits `forms` for every pretraining seed,
/// overwriting existing checkpoints.
pub fn cmd_pretrain(cfg: &ExperimentConfig, forms: &[ModelForm]) -> Result<()> {
    for seed in pretrain_seeds(cfg) {
        let dir = pretrain_dir(cfg, seed);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        log::info!("pretraining {} with seed {seed}", cfg.domain);
        let data = collect_pretraining_data(cfg, seed)?;
        data.save(&dir)?;
        for &form in forms {
            let model = fit_pretrained(cfg, &data, form, seed)?;
            model.save(&model_dir(cfg, seed, form))?;
        }
        write_manifest(&dir, "manifest.json", cfg)?;
    }
    Ok(())
}

fn check_fingerprint(cfg: &ExperimentConfig, dir: &Path, what: &str) -> Result<()> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(Error::Config(format!(
            "{what} needs pretraining checkpoints in {} (run `pretrain` first)",
            dir.display()
        )));
    }
    let manifest: Manifest = read_json(&path)?;
    if manifest.pretrain_fingerprint != pretrain_fingerprint(cfg) {
        return Err(Error::Config(format!(
            "checkpoints in {} were produced with different settings; rerun `pretrain`",
            dir.display()
        )));
    }
    Ok(())
}

/// Whether every pretraining seed already has checkpoints of `forms`
/// produced with the current settings.
pub fn pretraining_is_current(cfg: &ExperimentConfig, forms: &[ModelForm]) -> bool {
    pretrain_seeds(cfg).into_iter().all(|seed| {
        check_fingerprint(cfg, &pretrain_dir(cfg, seed), "").is_ok()
            && forms.iter().all(|&f| model_dir(cfg, seed, f).join("posterior.json").exists())
    })
}

/// Loads the pretraining data of `pretrain_seed`.
pub fn load_pretrain_data(cfg: &ExperimentConfig, pretrain_seed: u64, what: &str) -> Result<PretrainData> {
    let dir = pretrain_dir(cfg, pretrain_seed);
    check_fingerprint(cfg, &dir, what)?;
    PretrainData::load(&dir, cfg.replay)
}

/// Loads the fitted model of `form`, naming `what` in the error when it is
/// missing.
pub fn load_pretrained_model(
    cfg: &ExperimentConfig,
    pretrain_seed: u64,
    form: ModelForm,
    what: &str,
) -> Result<PretrainedModel> {
    let pdir = pretrain_dir(cfg, pretrain_seed);
    check_fingerprint(cfg, &pdir, what)?;
    let dir = model_dir(cfg, pretrain_seed, form);
    if !dir.join("posterior.json").exists() {
        return Err(Error::Config(format!(
            "{what} needs a pretrained {} model in {}",
            form_dir(form),
            dir.display()
        )));
    }
    PretrainedModel::load(&dir)
}

pub fn results_path(cfg: &ExperimentConfig) -> PathBuf {
    domain_dir(cfg).join("results.csv")
}

/// Runs the variant × seed grid, appending to the results table. Pairs that
/// already have rows are skipped. Returns the number of rows written.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<usize> {
    let dir = domain_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_manifest(&dir, "run-manifest.json", cfg)?;
    let path = results_path(cfg);
    let done: BTreeSet<(Variant, u64)> = read_results(&path)?
        .into_iter()
        .map(|r| (r.variant, r.seed))
        .collect();

    // Fail on missing checkpoints before any run starts.
    for &variant in &cfg.variants {
        if let Some(form) = form_for(variant).filter(|_| variant.needs_pretraining()) {
            for seed in pretrain_seeds(cfg) {
                let dir = model_dir(cfg, seed, form);
                if !dir.join("posterior.json").exists() {
                    return Err(Error::Config(format!(
                        "variant `{variant}` needs a pretrained checkpoint in {}",
                        dir.display()
                    )));
                }
            }
        }
    }

    let mut written = 0;
    let mut writer = results::ResultsWriter::open(&path)?;
    for &variant in &cfg.variants {
        for &seed in &cfg.seeds {
            if done.contains(&(variant, seed)) {
                log::info!("skipping {variant} seed {seed}: already in results");
                continue;
            }
            let outcome = if variant.needs_pretraining() {
                let ps = cfg.pretrain_seed_for(seed);
                let what = format!("variant `{variant}`");
                let data = load_pretrain_data(cfg, ps, &what)?;
                let form = form_for(variant).expect("pretrained variants have a model");
                let model = load_pretrained_model(cfg, ps, form, &what)?;
                run_variant(cfg, variant, seed, Some((&data, &model)))?
            } else {
                run_variant(cfg, variant, seed, None)?
            };
            let rows: Vec<ResultRow> = outcome
                .results
                .iter()
                .map(|r| ResultRow::from_episode(cfg.domain, variant, seed, r))
                .collect();
            writer.append(&rows)?;
            written += rows.len();
            let mean = outcome.results.iter().map(|r| r.total_reward).sum::<f64>() / outcome.results.len().max(1) as f64;
            log::info!("{variant} seed {seed}: mean reward {mean:.2}");
        }
    }
    Ok(written)
}
