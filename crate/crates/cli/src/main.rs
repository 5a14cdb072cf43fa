use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use rideshare::harness::audit::{audit_metrics, replay_episode};
use rideshare::harness::experiment::{episode_path, seed_dir};
use rideshare::harness::metrics::{collusion_metrics, read_metrics};
use rideshare::harness::{run_experiment, EpisodeLog, ExperimentConfig, MarketKind};
use rideshare::oracle;

#[derive(Parser)]
#[command(name = "rideshare", version, about = "Rideshare duopoly pricing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Market {
    Responsive,
    Lagging,
}

impl From<Market> for MarketKind {
    fn from(m: Market) -> Self {
        match m {
            Market::Responsive => MarketKind::Responsive,
            Market::Lagging => MarketKind::Lagging,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Qp,
    Driver,
    Gradient,
    Conservation,
}

#[derive(Subcommand)]
enum Command {
    /// Train both pricing agents and write a run directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        market: Market,
        /// Comma-separated seeds; defaults to the config's seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Continue each seed from its last checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        episode_len: Option<usize>,
    },
    /// Run a brute-force reference suite.
    Oracle {
        #[arg(long, value_enum)]
        suite: Suite,
        /// Market config; the two-node example when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize a run's final epochs and write analysis.json.
    Analyze {
        #[arg(long)]
        run: PathBuf,
    },
    /// Re-derive a logged episode and audit the run's metrics.
    Replay {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        episode: usize,
        /// Defaults to the first seed directory found.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::two_node_example(MarketKind::Responsive)),
    }
}

fn seed_dirs(run: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(run).with_context(|| format!("reading {}", run.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(seed) = name.strip_prefix("seed_").and_then(|s| s.parse().ok()) {
            out.push((seed, entry.path()));
        }
    }
    out.sort();
    if out.is_empty() {
        bail!("no seed_* directories in {}", run.display());
    }
    Ok(out)
}

fn print(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate {
            config,
            market,
            seeds,
            out,
            resume,
            epochs,
            episode_len,
        } => {
            let mut cfg = load_config(Some(&config))?;
            cfg.set_market(market.into());
            if let Some(e) = epochs {
                cfg.sim.epochs = e;
            }
            if let Some(l) = episode_len {
                cfg.sim.episode_len = l;
            }
            let seeds = if seeds.is_empty() { cfg.sim.seeds.clone() } else { seeds };
            let reports = run_experiment(&cfg, &seeds, &out, resume)?;
            for r in &reports {
                print(&json!({ "seed": r.seed, "dir": r.dir, "summary": r.summary }))?;
            }
            Ok(true)
        }
        Command::Oracle { suite, config, seed } => {
            let cfg = load_config(config.as_deref())?;
            match suite {
                Suite::Qp => {
                    let r = oracle::qp_suite(1000, 0.001, seed)?;
                    print(&serde_json::to_value(r)?)?;
                    Ok(r.passes(1e-9, 1e-10))
                }
                Suite::Driver => {
                    let mut sim = cfg.sim.clone();
                    sim.delta_a = 1.0;
                    let r = oracle::driver_suite(&cfg.graph, &sim, 200, 0.05, 0.95, seed)?;
                    print(&serde_json::to_value(r)?)?;
                    Ok(r.attained_fraction >= 0.9)
                }
                Suite::Gradient => {
                    let r = oracle::gradient_suite(20, seed)?;
                    print(&serde_json::to_value(&r)?)?;
                    Ok(r.worst_rel_error < 1e-4)
                }
                Suite::Conservation => {
                    let mut ok = true;
                    for kind in [MarketKind::Responsive, MarketKind::Lagging] {
                        let mut c = cfg.clone();
                        c.set_market(kind);
                        let r = oracle::conservation_run(&c.graph, &c.sim, seed)?;
                        ok &= r.passenger_rel_error <= 1e-6 && r.driver_rel_error <= 1e-6 && r.clamp_events == 0;
                        print(&json!({ "market": kind.label(), "report": r }))?;
                    }
                    Ok(ok)
                }
            }
        }
        Command::Analyze { run } => {
            let cfg = ExperimentConfig::load(&run.join("config.json"))?;
            let mut seeds = Vec::new();
            for (seed, dir) in seed_dirs(&run)? {
                let rows = read_metrics(&dir.join("metrics.csv"))?;
                let summary = collusion_metrics(&rows, &cfg.sim, &cfg.report.thresholds)?;
                seeds.push(json!({ "seed": seed, "summary": summary }));
            }
            let analysis = json!({ "delta_a": cfg.sim.delta_a, "seeds": seeds });
            std::fs::write(run.join("analysis.json"), serde_json::to_string_pretty(&analysis)?)?;
            print(&analysis)?;
            Ok(true)
        }
        Command::Replay { run, episode, seed } => {
            let cfg = ExperimentConfig::load(&run.join("config.json"))?;
            let dir = match seed {
                Some(s) => seed_dir(&run, s),
                None => seed_dirs(&run)?.remove(0).1,
            };
            let path = episode_path(&dir, episode);
            let log = EpisodeLog::load(&path).with_context(|| format!("loading {}", path.display()))?;
            let replay = replay_episode(&log, &cfg.graph, &cfg.sim, cfg.ppo.reward_scale)?;
            let metrics = audit_metrics(&dir, &cfg.sim, cfg.report.ema_alpha)?;
            let ok = replay.passes(1e-9) && metrics.raw_error <= 1e-9 && metrics.ema_error <= 1e-9;
            print(&json!({ "episode": episode, "replay": replay, "metrics": metrics, "ok": ok }))?;
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
