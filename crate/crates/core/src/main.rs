use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hipmdp::config::{ExperimentConfig, Variant};
use hipmdp::envs::Domain;
use hipmdp::harness;
use hipmdp::{Error, Result};

#[derive(Parser)]
#[command(name = "hipmdp", version, about = "Hidden-parameter MDP transfer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect pretraining data and fit the transition models.
    Pretrain(Common),
    /// Run the variant x seed grid and append to the results table.
    Run(Common),
    /// Predictive uncertainty in explored and unexplored regions (nav2d).
    DemoUncertainty(Common),
    /// Per-episode wall time over a stream of new instances (nav2d).
    BenchScaling(Common),
    /// One-step prediction error of each model form on a new instance.
    CompareModels(Common),
}

#[derive(Args)]
struct Common {
    /// One of nav2d, acrobot, hiv.
    #[arg(long)]
    domain: Option<Domain>,
    /// Variant to run; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',')]
    variant: Vec<Variant>,
    /// Seed to run; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Episode count for the command.
    #[arg(long)]
    episodes: Option<usize>,
    /// JSON config file; keys mirror the dotted override names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any config value by dotted key, e.g. `--set agent.gamma=0.99`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn resolve(common: &Common, episodes_key: &str) -> Result<ExperimentConfig> {
    let mut overrides = Vec::new();
    for item in &common.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{item}`")))?;
        overrides.push((k.to_owned(), v.to_owned()));
    }
    if let Some(n) = common.episodes {
        overrides.push((episodes_key.to_owned(), n.to_string()));
    }
    if let Some(out) = &common.out {
        overrides.push(("out_dir".into(), serde_json::to_string(out).expect("path serializes")));
    }
    if !common.seed.is_empty() {
        overrides.push(("seeds".into(), serde_json::to_string(&common.seed).expect("seeds serialize")));
    }
    if !common.variant.is_empty() {
        overrides.push(("variants".into(), serde_json::to_string(&common.variant).expect("variants serialize")));
    }
    ExperimentConfig::resolve(common.domain, common.config.as_deref(), &overrides)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(c) => {
            let cfg = resolve(&c, "orchestrator.pretrain_episodes")?;
            let variants: Vec<Variant> = if c.variant.is_empty() {
                vec![Variant::Embedded, Variant::Linear, Variant::Average]
            } else {
                cfg.variants.clone()
            };
            let forms = harness::required_forms(&variants);
            harness::cmd_pretrain(&cfg, &forms)?;
            for f in &forms {
                log::info!("fitted {f:?} model");
            }
        }
        Command::Run(c) => {
            let cfg = resolve(&c, "orchestrator.episodes")?;
            let rows = harness::cmd_run(&cfg)?;
            println!("{rows} rows appended to {}", harness::results_path(&cfg).display());
        }
        Command::DemoUncertainty(c) => {
            let cfg = resolve(&c, "orchestrator.pretrain_episodes")?;
            let report = harness::cmd_demo_uncertainty(&cfg)?;
            for s in &report.seeds {
                println!(
                    "seed {}: ratio {:.3} (red latent), {:.3} (blue latent)",
                    s.seed, s.red.ratio, s.blue.ratio
                );
            }
        }
        Command::BenchScaling(c) => {
            let cfg = resolve(&c, "harness.bench_episodes")?;
            for r in harness::cmd_bench_scaling(&cfg)? {
                println!(
                    "seed {}: mean {:.1} ms, relative drift {:.3}",
                    r.seed, r.mean_ms, r.relative_drift
                );
            }
        }
        Command::CompareModels(c) => {
            let cfg = resolve(&c, "harness.compare_episodes")?;
            let rows = harness::cmd_compare_models(&cfg)?;
            println!("{} rows written", rows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
