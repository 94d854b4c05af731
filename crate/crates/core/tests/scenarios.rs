use atomic_xchain::coord::CoordStatus;
use atomic_xchain::scenario::{self, contracts};
use atomic_xchain::sim::{
    self, check_liveness, check_safety, ByzantineStyle, FaultSpec, FinalState, KeyRotation, ScenarioConfig,
    StorageOverride, Trace,
};
use atomic_xchain::txcore::{Address, ChainId};
use proptest::prelude::*;

fn run(cfg: &ScenarioConfig, seed: u64) -> sim::RunOutput {
    let out = sim::run(cfg, seed).unwrap();
    let safety = check_safety(&out.trace, &out.final_state);
    assert!(safety.pass, "{safety}");
    if !out.final_state.outside_assumptions {
        let live = check_liveness(&out.trace, &out.final_state, &cfg.params);
        assert!(live.pass, "{live}");
    }
    out
}

fn status(out: &sim::RunOutput) -> CoordStatus {
    out.final_state.submissions[0].status
}

fn reason(out: &sim::RunOutput) -> String {
    out.final_state.submissions[0].reason.clone().unwrap_or_default()
}

fn value(out: &sim::RunOutput, chain: u64, addr: u64, key: u64) -> Option<u64> {
    out.final_state
        .storage(ChainId::new(chain), Address::from_u64(addr))
        .and_then(|s| s.get(&key).copied())
}

#[test]
fn worked_example_commits_every_chain() {
    let out = run(&scenario::load("nested_four_chain").unwrap(), 0);
    assert_eq!(status(&out), CoordStatus::Committed);
    assert_eq!(value(&out, 1, 0xa, 1), Some(1));
    assert_eq!(value(&out, 2, 0xb, 3), Some(1));
    assert_eq!(value(&out, 4, 0xd, 1), Some(10));
    // the view target is never written
    assert_eq!(value(&out, 3, 0xc, 1), Some(5));
    assert_eq!(out.trace.of_kind("stage").count(), 3);
}

#[test]
fn single_agent_books_room_and_seat() {
    let out = run(&scenario::load("travel_agent_single").unwrap(), 0);
    assert_eq!(status(&out), CoordStatus::Committed);
    assert_eq!(value(&out, 2, 0xb1, 101), Some(7));
    assert_eq!(value(&out, 3, 0xc1, 12), Some(7));
}

#[test]
fn routers_skip_locked_items() {
    let out = run(&scenario::load("erc20_router_two_agents").unwrap(), 0);
    assert_eq!(value(&out, 2, 0x21, 1), Some(7));
    assert_eq!(value(&out, 2, 0x22, 1), Some(8));
    assert_eq!(value(&out, 4, 0x41, 900), Some(30));
    assert_eq!(value(&out, 4, 0x42, 900), Some(30));
}

fn guarded(key: u64, live: u64) -> ScenarioConfig {
    let mut cfg = scenario::load("auth_checks").unwrap();
    let g = Address::from_u64(0xb);
    let c = cfg.contracts.iter_mut().find(|c| c.address == g).unwrap();
    let authorised = c.storage[&key];
    c.storage.insert(key, live);
    // The builder still sees the authorised value, so the nest is constructed.
    cfg.submissions[0].snapshot_overrides.push(StorageOverride {
        chain: ChainId::new(2),
        contract: g,
        key,
        value: authorised,
    });
    cfg
}

#[test]
fn guarded_contract_accepts_authorised_caller() {
    let out = run(&scenario::load("auth_checks").unwrap(), 0);
    assert_eq!(status(&out), CoordStatus::Committed);
    assert_eq!(value(&out, 2, 0xb, 1), Some(5));
}

#[test]
fn each_guard_rejects_on_its_own() {
    let cases = [
        (contracts::AUTH_FROM_ADDRESS, 0xf, "unauthorised from address"),
        (contracts::AUTH_FROM_CHAIN, 3, "unauthorised from chain"),
        (contracts::AUTH_ORIGIN_CHAIN, 2, "unauthorised originating chain"),
    ];
    for (key, live, why) in cases {
        let out = run(&guarded(key, live), 0);
        assert_eq!(status(&out), CoordStatus::Ignored, "{why}");
        let failed = out.trace.of_kind("tx_failed").next().expect("failure traced");
        assert!(failed.details.to_string().contains(why), "{}", failed.details);
        assert_eq!(value(&out, 2, 0xb, 1), None);
        assert_eq!(value(&out, 1, 0xa, 1), None);
    }
}

#[test]
fn tampered_account_signature_never_reaches_coordination() {
    let mut cfg = scenario::load("nested_four_chain").unwrap();
    cfg.submissions[0].tamper_signature = true;
    let out = run(&cfg, 0);
    assert_eq!(status(&out), CoordStatus::NotStarted);
    assert!(out.final_state.coordination.records.is_empty());
    assert_eq!(out.trace.of_kind("submission_rejected").count(), 1);
    assert!(!reason(&out).is_empty());
}

#[test]
fn key_rotation_mid_run_still_commits() {
    let mut cfg = scenario::load("nested_four_chain").unwrap();
    cfg.key_rotations = vec![
        KeyRotation {
            chain: ChainId::new(2),
            at_tick: 4,
        },
        KeyRotation {
            chain: ChainId::new(1),
            at_tick: 9,
        },
    ];
    let out = run(&cfg, 0);
    assert_eq!(out.trace.of_kind("key_rotated").count(), 2);
    assert_eq!(status(&out), CoordStatus::Committed);
}

#[test]
fn corrupt_minority_is_tolerated() {
    let cfg = scenario::load("nested_four_chain").unwrap();
    let faults = [FaultSpec::ByzantineValidators {
        chain: ChainId::new(2),
        count: 1,
        style: ByzantineStyle::Corrupt,
    }];
    let out = sim::run_with_faults(&cfg, 0, &faults).unwrap();
    assert!(!out.final_state.outside_assumptions);
    assert_eq!(status(&out), CoordStatus::Committed);
}

#[test]
fn threshold_many_byzantine_is_flagged() {
    let cfg = scenario::load("nested_four_chain").unwrap();
    let faults = [FaultSpec::ByzantineValidators {
        chain: ChainId::new(2),
        count: 3,
        style: ByzantineStyle::Crash,
    }];
    let out = sim::run_with_faults(&cfg, 0, &faults).unwrap();
    assert!(out.final_state.outside_assumptions);
    assert_ne!(status(&out), CoordStatus::Committed);
}

#[test]
fn trace_and_state_round_trip_through_json() {
    let out = sim::run(&scenario::load("erc20_router_two_agents").unwrap(), 8).unwrap();
    let trace = Trace::from_jsonl(&out.trace.to_jsonl()).unwrap();
    assert_eq!(trace, out.trace);
    let state = FinalState::from_json(&out.final_state.to_json()).unwrap();
    assert_eq!(state, out.final_state);
}

#[test]
fn list_describes_every_scenario() {
    let listed = scenario::list();
    assert_eq!(listed.len(), scenario::names().count());
    assert!(listed.iter().all(|(_, d)| !d.is_empty()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_faults_preserve_atomicity(idx in 0usize..10, seed in any::<u64>()) {
        let name = scenario::names().nth(idx).unwrap();
        let cfg = scenario::load(name).unwrap();
        let faults = sim::random_faults(&cfg, seed);
        let out = sim::run_with_faults(&cfg, seed, &faults).unwrap();
        let safety = check_safety(&out.trace, &out.final_state);
        prop_assert!(safety.pass, "{} seed {}: {}", name, seed, safety);
        prop_assert!(out.final_state.quiescent);
        // quiescence leaves no record in Started
        for rec in out.final_state.coordination.records.values() {
            prop_assert!(rec.resolved.is_terminal());
        }
    }

    #[test]
    fn config_json_round_trips(idx in 0usize..10) {
        let name = scenario::names().nth(idx).unwrap();
        let cfg = scenario::load(name).unwrap();
        prop_assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
