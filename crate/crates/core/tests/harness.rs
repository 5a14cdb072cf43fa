use std::fs;
use std::path::Path;

use rideshare::env::MarketEnv;
use rideshare::harness::audit::{audit_metrics, replay_episode};
use rideshare::harness::experiment::{episode_path, run_seed, seed_dir};
use rideshare::harness::metrics::read_metrics;
use rideshare::harness::{run_episode, run_experiment, EpisodeLog, ExperimentConfig, MarketKind};
use rideshare::market::{action_len, Platform};
use rideshare::ppo::agent::stream_rng;
use rideshare::ppo::{Agent, PpoHyperparams};

fn tiny(market: MarketKind, epochs: usize, episode_len: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::two_node_example(market);
    cfg.sim.epochs = epochs;
    cfg.sim.episode_len = episode_len;
    cfg.ppo.hidden_sizes = vec![16, 16];
    cfg.ppo.minibatch_size = 16;
    cfg.ppo.update_epochs = 2;
    cfg.report.log_every = 2;
    cfg.report.checkpoint_every = 2;
    cfg
}

fn agents(env: &MarketEnv, hp: &PpoHyperparams, seed: u64) -> (Agent, Agent) {
    let obs = env.encoder().len();
    let act = action_len(env.n_nodes());
    (
        Agent::new(Platform::U, obs, act, hp.clone(), seed).unwrap(),
        Agent::new(Platform::L, obs, act, hp.clone(), seed).unwrap(),
    )
}

#[test]
fn single_step_episode_logs_one_transition() {
    let cfg = tiny(MarketKind::Responsive, 1, 1);
    let env = MarketEnv::new(cfg.graph.clone(), cfg.sim.clone()).unwrap();
    let (mut u, mut l) = agents(&env, &cfg.ppo, 0);
    let mut rng = stream_rng(0, 0);
    let state = env.reset(&mut rng).unwrap();
    let out = run_episode(&env, state, &mut u, &mut l, &mut rng, 0, 0).unwrap();
    assert_eq!(out.log.steps.len(), 1);
    assert_eq!(out.buffer_u.len(), 1);
    assert_eq!(out.buffer_l.len(), 1);
    assert_eq!(out.final_state.step_index, 1);
}

#[test]
fn frozen_agents_give_identical_logs() {
    let cfg = tiny(MarketKind::Lagging, 1, 64);
    let env = MarketEnv::new(cfg.graph.clone(), cfg.sim.clone()).unwrap();
    let play = || {
        let (mut u, mut l) = agents(&env, &cfg.ppo, 5);
        u.policy.log_std = vec![-60.0; 4];
        l.policy.log_std = vec![-60.0; 4];
        let mut rng = stream_rng(5, 0);
        let state = env.reset(&mut rng).unwrap();
        let out = run_episode(&env, state, &mut u, &mut l, &mut rng, 0, 5).unwrap();
        let mut bytes = Vec::new();
        out.log.write_csv(&mut bytes).unwrap();
        bytes
    };
    assert_eq!(play(), play());
}

#[test]
fn both_agents_see_the_same_observation() {
    let cfg = tiny(MarketKind::Responsive, 1, 32);
    let env = MarketEnv::new(cfg.graph.clone(), cfg.sim.clone()).unwrap();
    let (mut u, mut l) = agents(&env, &cfg.ppo, 2);
    let mut rng = stream_rng(2, 0);
    let state = env.reset(&mut rng).unwrap();
    let out = run_episode(&env, state, &mut u, &mut l, &mut rng, 0, 2).unwrap();
    assert_eq!(out.buffer_u.observations, out.buffer_l.observations);
}

#[test]
fn smoke_run_writes_expected_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(MarketKind::Responsive, 1, 4);
    run_experiment(&cfg, &[3], dir.path(), false).unwrap();
    assert!(dir.path().join("config.json").exists());
    let sd = seed_dir(dir.path(), 3);
    let rows = read_metrics(&sd.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    let log = EpisodeLog::load(&episode_path(&sd, 0)).unwrap();
    assert_eq!(log.steps.len(), 4);
    for f in ["training.csv", "edge_prices.csv", "timing.csv", "checkpoint.json", "policy_u.json", "policy_l.json", "profits.svg", "prices_u.svg", "prices_l.svg"] {
        assert!(sd.join(f).exists(), "{f} missing");
    }
    let snapshot = ExperimentConfig::load(&dir.path().join("config.json")).unwrap();
    assert_eq!(snapshot, cfg);
}

#[test]
fn logs_replay_and_metrics_audit_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(MarketKind::Lagging, 12, 48);
    let rep = run_seed(&cfg, 1, &seed_dir(dir.path(), 1), false).unwrap();
    assert!(rep.summary.is_some());
    let sd = seed_dir(dir.path(), 1);
    let mut logged = 0;
    for epoch in 0..12 {
        let path = episode_path(&sd, epoch);
        if !path.exists() {
            continue;
        }
        logged += 1;
        let log = EpisodeLog::load(&path).unwrap();
        let r = replay_episode(&log, &cfg.graph, &cfg.sim, cfg.ppo.reward_scale).unwrap();
        assert_eq!(r.steps, 48);
        assert!(r.passes(1e-9), "{r:?}");
    }
    // epochs 0, 2, 4, 6, 8, 10 and the last one
    assert_eq!(logged, 7);
    let audit = audit_metrics(&sd, &cfg.sim, cfg.report.ema_alpha).unwrap();
    assert_eq!(audit.episodes_checked, 7);
    assert!(audit.raw_error <= 1e-12 && audit.ema_error <= 1e-12, "{audit:?}");
}

#[test]
fn tampered_log_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(MarketKind::Responsive, 1, 8);
    run_experiment(&cfg, &[0], dir.path(), false).unwrap();
    let path = episode_path(&seed_dir(dir.path(), 0), 0);
    let mut log = EpisodeLog::load(&path).unwrap();
    log.steps[3].profit_u += 1.0;
    let r = replay_episode(&log, &cfg.graph, &cfg.sim, cfg.ppo.reward_scale).unwrap();
    assert!(!r.passes(1e-9));
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn resumed_run_matches_uninterrupted() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let full = tiny(MarketKind::Responsive, 6, 40);
    run_experiment(&full, &[9], a.path(), false).unwrap();

    let mut first = full.clone();
    first.sim.epochs = 4;
    run_experiment(&first, &[9], b.path(), false).unwrap();
    run_experiment(&full, &[9], b.path(), true).unwrap();

    let (sa, sb) = (seed_dir(a.path(), 9), seed_dir(b.path(), 9));
    for f in ["metrics.csv", "training.csv", "edge_prices.csv", "policy_u.json", "policy_l.json"] {
        assert_eq!(read(&sa.join(f)), read(&sb.join(f)), "{f} differs");
    }
}

#[test]
fn config_file_in_repo_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/two_node.json");
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg, ExperimentConfig::two_node_example(MarketKind::Responsive));
    let mut lag = cfg.clone();
    lag.set_market(MarketKind::Lagging);
    assert_eq!(lag.sim.delta_a, 0.05);
}

#[test]
fn unknown_config_keys_rejected() {
    let text = r#"{"graph": {"od": [[0,1],[1,0]], "d": [[0,1],[1,0]]}, "sim": {"bogus": 1}}"#;
    assert!(serde_json::from_str::<ExperimentConfig>(text).is_err());
}
