//! Multi-epoch training runs and their on-disk artifacts.
//!
//! Layout of a run directory:
//!
//! ```text
//! <out>/config.json
//! <out>/seed_<s>/metrics.csv         one row per epoch, raw and EMA
//! <out>/seed_<s>/training.csv        update diagnostics per epoch
//! <out>/seed_<s>/edge_prices.csv     end-of-episode prices per edge
//! <out>/seed_<s>/timing.csv          wall-clock per epoch
//! <out>/seed_<s>/episodes/episode_<k>.csv
//! <out>/seed_<s>/checkpoint.json     resumable training state
//! <out>/seed_<s>/policy_{u,l}.json
//! <out>/seed_<s>/summary.json
//! <out>/seed_<s>/{profits,prices_u,prices_l}.svg
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::MarketEnv;
use crate::error::{Error, Result};
use crate::harness::episode::{run_episode, EpisodeLog};
use crate::harness::metrics::{
    collusion_metrics, with_ema, write_metrics, ClassificationThresholds, CollusionSummary,
    EpochMetrics, MetricsRow,
};
use crate::harness::plot;
use crate::market::{action_len, MarketState, OdGraph, Platform, SimConfig};
use crate::matrix::edges;
use crate::ppo::agent::{stream_rng, ENV_STREAM};
use crate::ppo::{Agent, AgentCheckpoint, PpoHyperparams, UpdateStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarketKind {
    Responsive,
    Lagging,
}

impl MarketKind {
    pub fn label(self) -> &'static str {
        match self {
            MarketKind::Responsive => "responsive",
            MarketKind::Lagging => "lagging",
        }
    }
}

impl fmt::Display for MarketKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MarketKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "responsive" => Ok(MarketKind::Responsive),
            "lagging" => Ok(MarketKind::Lagging),
            other => Err(Error::Usage(format!(
                "unknown market {other:?}; expected responsive or lagging"
            ))),
        }
    }
}

/// Driver perturbation width for each market type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketPresets {
    pub responsive: f64,
    pub lagging: f64,
}

impl Default for MarketPresets {
    fn default() -> Self {
        Self {
            responsive: 1.0,
            lagging: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub ema_alpha: f64,
    /// Full episode logs are kept for the first, the last and every k-th epoch.
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub plots: bool,
    pub thresholds: ClassificationThresholds,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            ema_alpha: 0.5,
            log_every: 25,
            checkpoint_every: 25,
            plots: true,
            thresholds: ClassificationThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: OdGraph,
    pub sim: SimConfig,
    #[serde(default)]
    pub markets: MarketPresets,
    #[serde(default)]
    pub ppo: PpoHyperparams,
    #[serde(default)]
    pub report: ReportConfig,
}

impl ExperimentConfig {
    /// The two-node market with default learner and report settings.
    pub fn two_node_example(market: MarketKind) -> Self {
        let mut cfg = Self {
            graph: OdGraph::two_node_example(),
            sim: SimConfig::two_node_example(1.0),
            markets: MarketPresets::default(),
            ppo: PpoHyperparams::default(),
            report: ReportConfig::default(),
        };
        cfg.set_market(market);
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_market(&mut self, market: MarketKind) {
        self.sim.delta_a = match market {
            MarketKind::Responsive => self.markets.responsive,
            MarketKind::Lagging => self.markets.lagging,
        };
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.sim.validate(&self.graph)?;
        self.ppo.validate()?;
        let r = &self.report;
        if !(r.ema_alpha > 0.0 && r.ema_alpha <= 1.0) {
            return Err(Error::Config("report.ema_alpha must lie in (0, 1]".into()));
        }
        if r.log_every == 0 || r.checkpoint_every == 0 {
            return Err(Error::Config(
                "report.log_every and report.checkpoint_every must be >= 1".into(),
            ));
        }
        if !(r.thresholds.final_fraction > 0.0 && r.thresholds.final_fraction <= 1.0) {
            return Err(Error::Config("thresholds.final_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Update diagnostics of both agents for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub epoch: usize,
    pub seed: u64,
    pub return_u: f64,
    pub return_l: f64,
    pub policy_loss_u: f64,
    pub policy_loss_l: f64,
    pub value_loss_u: f64,
    pub value_loss_l: f64,
    pub entropy_u: f64,
    pub entropy_l: f64,
    pub approx_kl_u: f64,
    pub approx_kl_l: f64,
    pub clip_fraction_u: f64,
    pub clip_fraction_l: f64,
}

impl TrainingRow {
    fn new(epoch: usize, seed: u64, u: &UpdateStats, l: &UpdateStats) -> Self {
        Self {
            epoch,
            seed,
            return_u: u.episode_return,
            return_l: l.episode_return,
            policy_loss_u: u.policy_loss,
            policy_loss_l: l.policy_loss,
            value_loss_u: u.value_loss,
            value_loss_l: l.value_loss,
            entropy_u: u.entropy,
            entropy_l: l.entropy,
            approx_kl_u: u.approx_kl,
            approx_kl_l: l.approx_kl,
            clip_fraction_u: u.clip_fraction,
            clip_fraction_l: l.clip_fraction,
        }
    }
}

pub const TRAINING_CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to continue a seed's run bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCheckpoint {
    pub version: u32,
    pub seed: u64,
    pub next_epoch: usize,
    pub agent_u: AgentCheckpoint,
    pub agent_l: AgentCheckpoint,
    pub env_rng: ChaCha8Rng,
    pub last_state: Option<MarketState>,
    pub metrics: Vec<EpochMetrics>,
    pub training: Vec<TrainingRow>,
    /// End-of-episode off-diagonal prices: `[r_u.., c_u.., r_l.., c_l..]`.
    pub edge_prices: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: Vec<MetricsRow>,
    pub summary: Option<CollusionSummary>,
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

pub fn episode_path(seed_dir: &Path, epoch: usize) -> PathBuf {
    seed_dir.join("episodes").join(format!("episode_{epoch}.csv"))
}

fn keeps_log(epoch: usize, epochs: usize, every: usize) -> bool {
    epoch == 0 || epoch + 1 == epochs || epoch % every == 0
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(value)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_edge_prices(path: &Path, n: usize, seed: u64, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["epoch".to_string(), "seed".to_string()];
    for name in ["r_u", "c_u", "r_l", "c_l"] {
        header.extend(edges(n).map(|(i, j)| format!("{name}_{i}_{j}")));
    }
    w.write_record(&header)?;
    for (epoch, r) in rows.iter().enumerate() {
        let mut rec = vec![epoch.to_string(), seed.to_string()];
        rec.extend(r.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn end_prices(log: &EpisodeLog) -> Vec<f64> {
    let last = log.steps.last().expect("non-empty episode");
    let p = &last.prices;
    [&p.u.rate, &p.u.commission, &p.l.rate, &p.l.commission]
        .iter()
        .flat_map(|m| m.off_diagonal_values())
        .collect()
}

/// Runs every seed in turn. With `resume`, seeds continue from their last
/// checkpoint when one exists.
pub fn run_experiment(
    config: &ExperimentConfig,
    seeds: &[u64],
    out: &Path,
    resume: bool,
) -> Result<Vec<SeedReport>> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::Usage("no seeds given".into()));
    }
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), config)?;
    seeds
        .iter()
        .map(|&s| run_seed(config, s, &seed_dir(out, s), resume))
        .collect()
}

pub fn run_seed(
    config: &ExperimentConfig,
    seed: u64,
    dir: &Path,
    resume: bool,
) -> Result<SeedReport> {
    config.validate()?;
    let env = MarketEnv::new(config.graph.clone(), config.sim.clone())?;
    let n = env.n_nodes();
    let obs_dim = env.encoder().len();
    let act_dim = action_len(n);
    let epochs = config.sim.epochs;
    let report = &config.report;
    fs::create_dir_all(dir.join("episodes"))?;
    let ck_path = dir.join("checkpoint.json");

    let ck = if resume && ck_path.exists() {
        let ck: TrainingCheckpoint = serde_json::from_str(&fs::read_to_string(&ck_path)?)?;
        if ck.version != TRAINING_CHECKPOINT_VERSION || ck.seed != seed {
            return Err(Error::Config(format!(
                "{} belongs to another run (version {}, seed {})",
                ck_path.display(),
                ck.version,
                ck.seed
            )));
        }
        log::info!("seed {seed}: resuming at epoch {}", ck.next_epoch);
        ck
    } else {
        TrainingCheckpoint {
            version: TRAINING_CHECKPOINT_VERSION,
            seed,
            next_epoch: 0,
            agent_u: Agent::new(Platform::U, obs_dim, act_dim, config.ppo.clone(), seed)?
                .checkpoint(),
            agent_l: Agent::new(Platform::L, obs_dim, act_dim, config.ppo.clone(), seed)?
                .checkpoint(),
            env_rng: stream_rng(seed, ENV_STREAM),
            last_state: None,
            metrics: Vec::new(),
            training: Vec::new(),
            edge_prices: Vec::new(),
        }
    };
    let mut agent_u = Agent::from_checkpoint(ck.agent_u)?;
    let mut agent_l = Agent::from_checkpoint(ck.agent_l)?;
    let mut env_rng = ck.env_rng;
    let mut last_state = ck.last_state;
    let mut metrics = ck.metrics;
    let mut training = ck.training;
    let mut edge_prices = ck.edge_prices;

    let mut timing = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("timing.csv"))?;
    if timing.metadata()?.len() == 0 {
        writeln!(timing, "epoch,seed,rollout_secs,update_secs")?;
    }

    for epoch in ck.next_epoch..epochs {
        let t0 = Instant::now();
        let mut state = env.reset(&mut env_rng)?;
        if config.sim.persist_populations {
            if let Some(prev) = &last_state {
                state.populations = prev.populations.clone();
            }
        }
        let out = run_episode(&env, state, &mut agent_u, &mut agent_l, &mut env_rng, epoch, seed)?;
        let rollout_secs = t0.elapsed().as_secs_f64();
        metrics.push(EpochMetrics::from_log(&out.log, config.sim.gas_cost)?);
        edge_prices.push(end_prices(&out.log));
        if keeps_log(epoch, epochs, report.log_every) {
            out.log.save(&episode_path(dir, epoch))?;
        }

        let t1 = Instant::now();
        let stats_u = agent_u.update(&out.buffer_u)?;
        let stats_l = agent_l.update(&out.buffer_l)?;
        training.push(TrainingRow::new(epoch, seed, &stats_u, &stats_l));
        last_state = Some(out.final_state);
        writeln!(
            timing,
            "{epoch},{seed},{rollout_secs:.4},{:.4}",
            t1.elapsed().as_secs_f64()
        )?;

        let m = metrics.last().expect("pushed above");
        if epoch % report.log_every == 0 || epoch + 1 == epochs {
            log::info!(
                "seed {seed} epoch {epoch}: profit u {:.1} l {:.1}, r/c u {:.2}/{:.2} l {:.2}/{:.2}",
                m.profit_u,
                m.profit_l,
                m.mean_r_u,
                m.mean_c_u,
                m.mean_r_l,
                m.mean_c_l
            );
        }
        if (epoch + 1) % report.checkpoint_every == 0 || epoch + 1 == epochs {
            let ck = TrainingCheckpoint {
                version: TRAINING_CHECKPOINT_VERSION,
                seed,
                next_epoch: epoch + 1,
                agent_u: agent_u.checkpoint(),
                agent_l: agent_l.checkpoint(),
                env_rng: env_rng.clone(),
                last_state: last_state.clone(),
                metrics: metrics.clone(),
                training: training.clone(),
                edge_prices: edge_prices.clone(),
            };
            write_json(&ck_path, &ck)?;
        }
    }

    let rows = with_ema(&metrics, report.ema_alpha);
    write_metrics(&dir.join("metrics.csv"), &rows)?;
    write_rows(&dir.join("training.csv"), &training)?;
    write_edge_prices(&dir.join("edge_prices.csv"), n, seed, &edge_prices)?;
    agent_u.policy_checkpoint().save(&dir.join("policy_u.json"))?;
    agent_l.policy_checkpoint().save(&dir.join("policy_l.json"))?;
    let summary = if rows.len() >= 10 {
        let s = collusion_metrics(&rows, &config.sim, &report.thresholds)?;
        write_json(&dir.join("summary.json"), &s)?;
        Some(s)
    } else {
        None
    };
    if report.plots {
        plot::write_run_plots(dir, &rows, &config.sim)?;
    }
    Ok(SeedReport {
        seed,
        dir: dir.to_path_buf(),
        metrics: rows,
        summary,
    })
}
