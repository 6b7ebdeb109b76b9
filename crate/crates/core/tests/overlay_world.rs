use bootnet::bootstrap::Phase;
use bootnet::report::Outcome;
use bootnet::scenario::{run_bootstrap_scenario, run_dht, run_ring, run_scenario, RunOptions, Scenario};
use proptest::prelude::*;

fn ring_scenario(seeds: usize) -> Scenario {
    let src = format!(
        "schema = 1\nname = \"rings\"\nkind = \"ring\"\n\n[public]\nk = 2\nseeds = {seeds}\nnetworks = 3\n\n\
         [ring]\nrings = 3\nmin_nodes = 12\nmax_nodes = 40\nkeys = 50\nsettle = 150.0\n"
    );
    Scenario::parse(&src, "rings.toml").expect("valid scenario")
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    // Several join points can seed rings that start out apart; they must merge.
    #[test]
    fn rings_with_several_seeds_converge(seed in any::<u64>(), seeds in 2usize..5) {
        let run = run_ring(&ring_scenario(seeds), seed, false);
        prop_assert_eq!(run.report.near_mismatches, 0);
        prop_assert_eq!(run.report.misrouted + run.report.undelivered, 0);
    }

    #[test]
    fn dht_soft_state_holds_with_several_seeds(seed in any::<u64>()) {
        let src = "schema = 1\nname = \"d\"\nkind = \"dht\"\n\n[public]\nseeds = 3\n\n\
                   [dht]\nruns = 4\nnodes = 20\nttl = 20\nsettle = 90.0\n";
        let sc = Scenario::parse(src, "d.toml").expect("valid scenario");
        let r = run_dht(&sc, seed, false).report;
        prop_assert_eq!(r.multi_value_violations + r.expiry_violations + r.placement_violations, 0);
    }
}

#[test]
fn churned_peers_never_start_and_survivors_connect() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/phase-ordering.toml");
    let sc = Scenario::load(&path).expect("bundled scenario");
    let plan = sc.peer_plan();
    let run = run_bootstrap_scenario(&sc, &plan, sc.seed, sc.max_virtual_time, false);
    assert!(run.report.all_connected);
    let late = run.host("p7").expect("p7");
    assert!(!run.world.is_alive(late));
    assert!(run.world.peer(late).privates[0].session.phase_log().is_empty());
    for row in run.report.peers.iter().filter(|r| r.alive) {
        assert_eq!(row.phase, Phase::Connected, "{}", row.name);
    }
    let alive = run.report.peers.iter().filter(|r| r.alive).count();
    assert_eq!(alive, plan.len() - 2);
}

#[test]
fn presence_baseline_is_reported_alongside() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/presence.toml");
    let sc = Scenario::load(&path).expect("bundled scenario");
    let out = run_scenario(&sc, &RunOptions { seed: None, max_virtual_time: None, keep_trace: false });
    assert_eq!(out.report.outcome, Outcome::Connected);
    let main = out.report.bootstrap.expect("main run");
    let base = out.report.baseline.expect("baseline run");
    assert!(main.peers.iter().any(|p| p.domain != main.peers[0].domain));
    assert!(base.peers.iter().all(|p| p.domain == base.peers[0].domain));
    assert!(main.peers.iter().all(|p| p.max_requests_per_10s.is_some_and(|n| n <= 10)));
}
