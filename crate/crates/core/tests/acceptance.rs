//! Acceptance criteria, one pass/fail line each.
//!
//! Criteria 6 to 9 are exact checks that run with every `cargo test`. Criteria
//! 1 to 5 run the desk-scale experiments (tens of minutes to hours on one
//! core), so they are ignored by default:
//!
//! ```text
//! cargo test --release --test acceptance -- --ignored --nocapture
//! ```
//!
//! Their checkpoints are cached under `HIPMDP_ACCEPTANCE_DIR` (default: the
//! cargo target temp dir) and reused while the settings fingerprint matches.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use common::oracles;
use hipmdp::bnn::ModelForm;
use hipmdp::config::{ExperimentConfig, Variant};
use hipmdp::envs::Domain;
use hipmdp::harness::{
    cmd_bench_scaling, cmd_compare_models, cmd_demo_uncertainty, cmd_pretrain, cmd_run, pretraining_is_current,
    read_results, required_forms, results_path, CompareRow, ResultRow,
};

static HEAVY: Mutex<()> = Mutex::new(());

fn serialize() -> MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, detail: &str) {
    println!("criterion {n} {}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

/// At least four of five seeds.
fn majority(hits: usize, total: usize) -> bool {
    hits * 5 >= total * 4
}

fn cache_root() -> PathBuf {
    std::env::var_os("HIPMDP_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

fn config(domain: Domain, subdir: &str, overrides: &[(&str, &str)]) -> ExperimentConfig {
    let mut pairs: Vec<(String, String)> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let out = cache_root().join(subdir);
    pairs.push(("out_dir".into(), serde_json::to_string(&out).unwrap()));
    ExperimentConfig::resolve(Some(domain), None, &pairs).unwrap()
}

fn ensure_pretrained(cfg: &ExperimentConfig, forms: &[ModelForm]) {
    if !pretraining_is_current(cfg, forms) {
        cmd_pretrain(cfg, forms).unwrap();
    }
}

fn fresh_grid(cfg: &ExperimentConfig) -> Vec<ResultRow> {
    let path = results_path(cfg);
    if path.exists() {
        std::fs::remove_file(&path).unwrap();
    }
    cmd_run(cfg).unwrap();
    read_results(&path).unwrap()
}

/// nav2d with the full pretraining budget, shared by criteria 2, 4 and 5.
fn nav2d_full() -> ExperimentConfig {
    config(Domain::Nav2d, "nav2d-full", &[])
}

const DESK_NAV2D_DEMO: &[(&str, &str)] = &[("orchestrator.pretrain_episodes", "100")];

/// Acrobot and HIV keep the full pretraining budget, but every run seed
/// shares the pretraining of seed 0.
const SHARED_PRETRAINING: &[(&str, &str)] = &[("orchestrator.pretrain_seed", "0")];

#[test]
#[ignore = "desk-scale experiment"]
fn criterion_1_uncertainty_contrast() {
    let _guard = serialize();
    let cfg = config(Domain::Nav2d, "nav2d-demo", DESK_NAV2D_DEMO);
    ensure_pretrained(&cfg, &[ModelForm::Embedded]);
    let demo = cmd_demo_uncertainty(&cfg).unwrap();
    let ratios: Vec<String> = demo
        .seeds
        .iter()
        .map(|s| format!("{:.2}/{:.2}", s.red.ratio, s.blue.ratio))
        .collect();
    let hits = demo.seeds.iter().filter(|s| s.red.ratio >= 2.0).count();
    report(
        1,
        majority(hits, demo.seeds.len()),
        &format!(
            "{hits}/{} seeds with ratio >= 2 (red/blue latent ratios {})",
            demo.seeds.len(),
            ratios.join(", ")
        ),
    );
}

#[test]
#[ignore = "desk-scale experiment"]
fn criterion_2_nav2d_transfer_ordering() {
    let _guard = serialize();
    let cfg = nav2d_full();
    ensure_pretrained(&cfg, &required_forms(&cfg.variants));
    let rows = fresh_grid(&cfg);

    let mut mean: BTreeMap<(u64, Variant), f64> = BTreeMap::new();
    for &seed in &cfg.seeds {
        for &variant in &cfg.variants {
            let later: Vec<f64> = rows
                .iter()
                .filter(|r| r.seed == seed && r.variant == variant && (2..=10).contains(&r.episode))
                .map(|r| r.total_reward)
                .collect();
            mean.insert((seed, variant), later.iter().sum::<f64>() / later.len() as f64);
        }
    }
    let ordered = cfg
        .seeds
        .iter()
        .filter(|&&s| {
            let e = mean[&(s, Variant::Embedded)];
            let rest = [Variant::Average, Variant::Scratch, Variant::ModelFree]
                .iter()
                .map(|&v| mean[&(s, v)])
                .fold(f64::NEG_INFINITY, f64::max);
            e > mean[&(s, Variant::Linear)] && e > rest
        })
        .count();
    let early_goal = cfg
        .seeds
        .iter()
        .filter(|&&s| {
            rows.iter()
                .any(|r| r.seed == s && r.variant == Variant::Embedded && r.episode == 2 && r.total_reward > 0.0)
        })
        .count();
    let table: Vec<String> = cfg
        .seeds
        .iter()
        .map(|&s| {
            let per: Vec<String> = cfg
                .variants
                .iter()
                .map(|&v| format!("{v}={:.0}", mean[&(s, v)]))
                .collect();
            format!("seed {s}: {}", per.join(" "))
        })
        .collect();
    report(
        2,
        majority(ordered, cfg.seeds.len()) && majority(early_goal, cfg.seeds.len()),
        &format!(
            "ordering holds in {ordered}/5 seeds, goal by episode 2 in {early_goal}/5 seeds; {}",
            table.join("; ")
        ),
    );
}

#[test]
#[ignore = "desk-scale experiment"]
fn criterion_3_acrobot_transfer() {
    let _guard = serialize();
    let cap = Domain::Acrobot.step_cap();
    let swung = |rows: &[ResultRow], seed: u64| rows.iter().any(|r| r.seed == seed && r.steps < cap);

    let mut embedded = config(Domain::Acrobot, "acrobot", SHARED_PRETRAINING);
    embedded.variants = vec![Variant::Embedded];
    embedded.orchestrator.episodes = 3;
    ensure_pretrained(&embedded, &[ModelForm::Embedded]);
    let rows = fresh_grid(&embedded);
    let solved = embedded.seeds.iter().filter(|&&s| swung(&rows, s)).count();

    let mut free = config(Domain::Acrobot, "acrobot-model-free", &[]);
    free.variants = vec![Variant::ModelFree];
    free.orchestrator.episodes = 10;
    let rows = fresh_grid(&free);
    let unsolved = free.seeds.iter().filter(|&&s| !swung(&rows, s)).count();

    report(
        3,
        majority(solved, embedded.seeds.len()) && majority(unsolved, free.seeds.len()),
        &format!("embedded swings up within 3 episodes in {solved}/5 seeds; model_free fails for 10 episodes in {unsolved}/5 seeds"),
    );
}

/// Episode-2 MSE (measured after the episode-1 tuning) per seed and model.
fn second_episode_mse(rows: &[CompareRow]) -> BTreeMap<(u64, String), f64> {
    rows.iter()
        .filter(|r| r.episode == 2)
        .map(|r| ((r.seed, r.model.clone()), r.mse))
        .collect()
}

#[test]
#[ignore = "desk-scale experiment"]
fn criterion_4_model_accuracy_ordering() {
    let _guard = serialize();
    let forms = [ModelForm::Embedded, ModelForm::Linear, ModelForm::Plain];

    let mut nav = nav2d_full();
    nav.harness.compare_episodes = 2;
    ensure_pretrained(&nav, &forms);
    let nav_mse = second_episode_mse(&cmd_compare_models(&nav).unwrap());
    let nav_hits = nav
        .seeds
        .iter()
        .filter(|&&s| {
            let m = |name: &str| nav_mse[&(s, name.to_string())];
            m("embedded") < m("linear") && m("linear") < m("average")
        })
        .count();

    let mut hiv = config(Domain::Hiv, "hiv", SHARED_PRETRAINING);
    hiv.harness.compare_episodes = 2;
    ensure_pretrained(&hiv, &forms);
    let hiv_mse = second_episode_mse(&cmd_compare_models(&hiv).unwrap());
    let hiv_hits = hiv
        .seeds
        .iter()
        .filter(|&&s| hiv_mse[&(s, "embedded".to_string())] < hiv_mse[&(s, "average".to_string())])
        .count();

    let fmt = |mse: &BTreeMap<(u64, String), f64>| {
        mse.iter()
            .map(|((s, m), v)| format!("{s}:{m}={v:.3e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    report(
        4,
        majority(nav_hits, nav.seeds.len()) && majority(hiv_hits, hiv.seeds.len()),
        &format!(
            "nav2d ordering in {nav_hits}/5 seeds, HIV ordering in {hiv_hits}/5 seeds; nav2d {}; hiv {}",
            fmt(&nav_mse),
            fmt(&hiv_mse)
        ),
    );
}

#[test]
#[ignore = "desk-scale experiment"]
fn criterion_5_scaling_flatness() {
    let _guard = serialize();
    let mut cfg = nav2d_full();
    cfg.seeds = vec![0];
    ensure_pretrained(&cfg, &[ModelForm::Embedded]);
    let bench = cmd_bench_scaling(&cfg).unwrap();
    let b = &bench[0];
    report(
        5,
        b.relative_drift.abs() < 0.25,
        &format!(
            "drift {:.3} of mean episode time {:.1} ms (update episodes {:.1} ms, others {:.1} ms)",
            b.relative_drift, b.mean_ms, b.mean_update_ms, b.mean_plain_ms
        ),
    );
}

#[test]
fn criterion_6_gradients_match_finite_differences() {
    let mut worst: f64 = 0.0;
    for (form, alpha) in [
        (ModelForm::Embedded, 0.5),
        (ModelForm::Embedded, 1.0),
        (ModelForm::Linear, 0.45),
        (ModelForm::Plain, 0.5),
    ] {
        let (theta, latent) = oracles::energy_gradient_errors(form, alpha);
        worst = worst.max(theta).max(latent.unwrap_or(0.0));
    }
    let td = oracles::td_gradient_error();
    report(
        6,
        worst < 1e-4 && td < 1e-4,
        &format!("energy rel err {worst:.2e}, TD loss rel err {td:.2e}"),
    );
}

#[test]
fn criterion_7_small_alpha_matches_free_energy() {
    let gap = oracles::small_alpha_gap();
    report(7, gap < 1e-3, &format!("relative gap {gap:.2e}"));
}

#[test]
fn criterion_8_oracle_equivalences() {
    let sampler = oracles::sampler_enumeration_gap(500);
    let ratios = oracles::rk4_error_ratios();
    // Fourth order halves the step and divides the error by 16.
    let fourth_order = ratios.iter().all(|r| (r.log2() - 4.0).abs() < 0.1);
    let residuals = oracles::hiv_steady_state_residuals();
    let worst_residual = residuals.iter().copied().fold(0.0, f64::max);
    let ddqn = oracles::ddqn_fixture_gap();
    report(
        8,
        sampler <= 1e-12 && fourth_order && worst_residual < 0.01 && ddqn < 1e-12,
        &format!(
            "sampler gap {sampler:.1e}, RK4 error ratios {ratios:.2?}, HIV residual {worst_residual:.2e}, DDQN gap {ddqn:.1e}"
        ),
    );
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// CSV text with the `wall_ms` column removed.
fn without_wall_clock(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let schema = lines.next().unwrap().to_owned();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let wall = header.iter().position(|h| *h == "wall_ms");
    let strip = |line: &str| {
        line.split(',')
            .enumerate()
            .filter(|(i, _)| Some(*i) != wall)
            .map(|(_, f)| f)
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = vec![schema, strip(&header.join(","))];
    out.extend(lines.map(strip));
    out
}

#[test]
fn criterion_9_commands_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny(Domain::Nav2d, dir.path());
    cfg.orchestrator.pretrain_episodes = 10;
    let forms = required_forms(&Variant::ALL);
    let domain = dir.path().join("nav2d");

    let mut mismatches = Vec::new();
    let run_all = || {
        cmd_pretrain(&cfg, &forms).unwrap();
        let checkpoints = files_under(&domain.join("pretrain"));
        let results = results_path(&cfg);
        if results.exists() {
            std::fs::remove_file(&results).unwrap();
        }
        cmd_run(&cfg).unwrap();
        cmd_demo_uncertainty(&cfg).unwrap();
        cmd_bench_scaling(&cfg).unwrap();
        cmd_compare_models(&cfg).unwrap();
        (
            checkpoints,
            without_wall_clock(&results),
            std::fs::read(domain.join("demo_uncertainty.json")).unwrap(),
            without_wall_clock(&domain.join("bench_scaling.csv")),
            std::fs::read(domain.join("compare_models.csv")).unwrap(),
        )
    };
    let first = run_all();
    let second = run_all();
    if first.0 != second.0 {
        mismatches.push("pretrain checkpoints");
    }
    if first.1 != second.1 {
        mismatches.push("run results");
    }
    if first.2 != second.2 {
        mismatches.push("demo-uncertainty");
    }
    if first.3 != second.3 {
        mismatches.push("bench-scaling");
    }
    if first.4 != second.4 {
        mismatches.push("compare-models");
    }
    report(
        9,
        mismatches.is_empty(),
        &if mismatches.is_empty() {
            format!("{} checkpoint files and every command output reproduced", first.0.len())
        } else {
            format!("outputs differ: {}", mismatches.join(", "))
        },
    );
}
