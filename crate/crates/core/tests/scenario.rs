use std::collections::BTreeSet;

use ztrust_core::aggregation::EpsilonMode;
use ztrust_core::attacks::{AttackKind, Selection};
use ztrust_core::ledger::ChainValidity;
use ztrust_core::sim::{run_scenario, RunMetadata, ScenarioConfig, Simulation, Topology};
use ztrust_core::Error;

fn small(topology: Topology, rounds: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(topology, 8, rounds);
    c.data.n_samples = 800;
    c.master_seed = 11;
    c
}

#[test]
fn one_round_gives_one_row_and_two_blocks() {
    for t in [Topology::BflRobust, Topology::BflPlain, Topology::CentralizedFedavg] {
        let run = run_scenario(&small(t, 1)).unwrap();
        assert_eq!(run.metrics.len(), 1);
        assert_eq!(run.ledger.len(), 2);
        assert_eq!(run.ledger.validate(), ChainValidity::Valid);
        assert_eq!(run.metrics_csv().lines().count(), 2);
    }
}

#[test]
fn identical_configs_give_identical_csv() {
    let mut c = small(Topology::BflRobust, 6);
    c.attack.selection = Selection::PerRoundRandom { min_k: 0, max_k: 2 };
    c.failure.device_dropout_prob = 0.2;
    let a = run_scenario(&c).unwrap();
    let b = run_scenario(&c).unwrap();
    assert_eq!(a.metrics_csv(), b.metrics_csv());
    assert_eq!(a.ledger.export(), b.ledger.export());
    c.master_seed += 1;
    assert_ne!(run_scenario(&c).unwrap().metrics_csv(), a.metrics_csv());
}

#[test]
fn server_failure_at_round_zero_freezes_the_zero_model() {
    let mut c = small(Topology::CentralizedFedavg, 5);
    c.failure.server_failure_round = Some(0);
    let run = run_scenario(&c).unwrap();
    let first = run.metrics[0].accuracy;
    for m in &run.metrics {
        assert_eq!(m.accuracy.to_bits(), first.to_bits());
        assert!(m.degenerate);
        assert_eq!(m.detection.tp + m.detection.fp + m.detection.fn_ + m.detection.tn, 0);
    }
    // nothing trained, so every block after genesis is empty
    assert!(run.ledger.blocks()[1..].iter().all(|b| b.records.is_empty()));
}

#[test]
fn robust_equals_plain_without_flags_and_with_uniform_trust() {
    let mut robust = small(Topology::BflRobust, 4);
    // one cluster for everyone means zero anomaly and equal trust
    robust.anomaly.width = 1e9;
    robust.aggregation.epsilon_mode = EpsilonMode::Absolute { epsilon: f64::INFINITY };
    let mut plain = robust.clone();
    plain.topology = Topology::BflPlain;
    let r = run_scenario(&robust).unwrap();
    let p = run_scenario(&plain).unwrap();
    for (a, b) in r.metrics.iter().zip(&p.metrics) {
        assert!(a.discarded.is_empty());
        assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
    }
}

#[test]
fn every_submission_is_rejected_discarded_or_aggregated() {
    let mut c = small(Topology::BflRobust, 8);
    c.attack.kind = AttackKind::Scale { gamma: -50.0 };
    c.attack.selection = Selection::FixedSet { devices: vec![2, 5] };
    c.failure.device_dropout_prob = 0.1;
    let mut sim = Simulation::new(&c).unwrap();
    for _ in 0..c.rounds {
        let m = sim.run_round().unwrap();
        let block = sim.ledger().tip();
        let accepted: BTreeSet<u32> = block.records.iter().map(|r| r.device_id).collect();
        let submitted = m.detection.tp + m.detection.fp + m.detection.fn_ + m.detection.tn;
        // flagged participants are rejected or discarded; the rest were aggregated
        assert!(m.discarded.is_subset(&accepted));
        assert!(accepted.len() <= submitted);
        assert_eq!(accepted.len(), block.records.len(), "one record per device per round");
        assert_eq!(sim.ledger().validate(), ChainValidity::Valid);
    }
}

#[test]
fn gamma_fifty_is_rejected_by_the_norm_bound() {
    let mut c = small(Topology::BflPlain, 3);
    c.attack.kind = AttackKind::Scale { gamma: 50.0 };
    c.attack.selection = Selection::FixedSet { devices: vec![1] };
    let run = run_scenario(&c).unwrap();
    for (m, block) in run.metrics.iter().zip(&run.ledger.blocks()[1..]) {
        assert_eq!(m.detection.tp, 1);
        assert!(block.records.iter().all(|r| r.device_id != 1));
    }
}

#[test]
fn robust_discards_attackers_in_late_rounds() {
    let mut c = ScenarioConfig::new(Topology::BflRobust, 20, 15);
    c.attack.kind = AttackKind::Scale { gamma: -5.0 };
    c.attack.selection = Selection::FixedSet { devices: vec![0, 1] };
    let run = run_scenario(&c).unwrap();
    for m in &run.metrics[10..] {
        assert!(
            m.discarded.is_superset(&[0, 1].into_iter().collect()),
            "round {}: {:?}",
            m.round,
            m.discarded
        );
        let honest_min = m.trust[2..].iter().copied().fold(f64::INFINITY, f64::min);
        assert!(m.trust[0] < honest_min && m.trust[1] < honest_min, "{:?}", m.trust);
    }
}

#[test]
fn trust_snapshots_follow_the_refresh_interval() {
    let mut c = small(Topology::BflRobust, 7);
    c.periodic_interval = 3;
    let run = run_scenario(&c).unwrap();
    let with_snapshot: Vec<u64> = run.ledger.blocks()[1..]
        .iter()
        .filter(|b| b.trust_snapshot.is_some())
        .map(|b| b.round)
        .collect();
    assert_eq!(with_snapshot, vec![0, 3, 6]);
    let plain = run_scenario(&small(Topology::BflPlain, 3)).unwrap();
    assert!(plain.ledger.blocks().iter().all(|b| b.trust_snapshot.is_none()));
    assert!(plain.metrics.iter().all(|m| m.trust.iter().all(|t| *t == c.trust.t0)));
}

#[test]
fn robust_delay_dominates_plain_delay() {
    let r = run_scenario(&small(Topology::BflRobust, 5)).unwrap();
    let p = run_scenario(&small(Topology::BflPlain, 5)).unwrap();
    for (a, b) in r.metrics.iter().zip(&p.metrics) {
        assert!(a.delay_s > b.delay_s);
    }
}

#[test]
fn miners_alternate() {
    let run = run_scenario(&small(Topology::BflPlain, 4)).unwrap();
    let miners: Vec<u32> = run.ledger.blocks()[1..].iter().map(|b| b.miner_id).collect();
    assert_eq!(miners, vec![0, 1, 0, 1]);
}

#[test]
fn metadata_resolves_every_default() {
    let run = run_scenario(&small(Topology::BflRobust, 2)).unwrap();
    let text = run.metadata.to_toml_string();
    let back: RunMetadata = toml::from_str(&text).unwrap();
    assert_eq!(back, run.metadata);
    assert!(back.config.verify.max_update_norm.is_some());
    assert_eq!(back.run.trust_timing, "post_update");
    for key in [
        "n_miners",
        "periodic_interval",
        "class_separation",
        "t_mine_per_block",
        "alpha",
        "epsilon_mode",
    ] {
        assert!(text.contains(key), "metadata lacks {key}");
    }
    // the resolved config reruns to the same result
    let rerun = run_scenario(&back.config).unwrap();
    assert_eq!(rerun.metrics_csv(), run.metrics_csv());
}

#[test]
fn label_shard_partition_runs() {
    let mut c = small(Topology::BflRobust, 3);
    c.data.partition = ztrust_core::data::PartitionMode::LabelShard;
    let run = run_scenario(&c).unwrap();
    assert_eq!(run.metrics.len(), 3);
}

#[test]
fn too_many_devices_is_a_config_error() {
    let mut c = small(Topology::BflPlain, 1);
    c.n_devices = 10_000;
    assert!(matches!(run_scenario(&c), Err(Error::Config { field, .. }) if field == "n_devices"));
}

#[test]
fn hundred_device_scale_completes() {
    let c = ScenarioConfig::new(Topology::BflRobust, 100, 20);
    let run = run_scenario(&c).unwrap();
    assert_eq!(run.metrics.len(), 20);
    assert_eq!(run.ledger.len(), 21);
    assert_eq!(run.metrics[0].trust.len(), 100);
    assert_eq!(run.ledger.validate(), ChainValidity::Valid);
}

#[test]
fn shipped_scenarios_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ScenarioConfig::from_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
    let full = ScenarioConfig::from_file(
        &std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/full_scale.toml"),
    )
    .unwrap();
    let mut defaults = ScenarioConfig::new(Topology::BflRobust, 100, 20);
    defaults.attack.selection = Selection::None;
    assert_eq!(full, defaults, "full_scale.toml spells out the defaults");
}
