//! Acceptance criteria, one PASS/FAIL line each. Run with `--nocapture` to see them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use bootnet::identifiers::{NodeId, ID_BYTES};
use bootnet::overlay::LinkClass;
use bootnet::report::{BootstrapReport, Outcome};
use bootnet::scenario::{
    run_bootstrap_scenario, run_dht, run_matrix, run_pathing, run_ring, run_scenario, NatSpec, RunOptions, Scenario,
};
use bootnet::simnet::SimTime;

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Scenario {
    Scenario::load(&scenarios_dir().join(format!("{name}.toml"))).expect("bundled scenario parses")
}

fn opts(seed: u64, keep_trace: bool) -> RunOptions {
    RunOptions { seed: Some(seed), max_virtual_time: None, keep_trace }
}

struct Verdict {
    problems: Vec<String>,
    summary: String,
}

impl Verdict {
    fn new() -> Self {
        Verdict { problems: Vec::new(), summary: String::new() }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.problems.push(what());
        }
    }
}

// 160-bit ring arithmetic on big-endian bytes, kept apart from the library's.

type Raw = [u8; ID_BYTES];

fn raw(id: NodeId) -> Raw {
    id.to_bytes()
}

fn sub_mod(a: Raw, b: Raw) -> Raw {
    let mut out = [0u8; ID_BYTES];
    let mut borrow = 0i16;
    for i in (0..ID_BYTES).rev() {
        let mut d = a[i] as i16 - b[i] as i16 - borrow;
        borrow = i16::from(d < 0);
        if d < 0 {
            d += 256;
        }
        out[i] = d as u8;
    }
    out
}

/// Clockwise steps from `from` to `to`.
fn cw(from: NodeId, to: NodeId) -> Raw {
    sub_mod(raw(to), raw(from))
}

fn dist(a: NodeId, b: NodeId) -> Raw {
    cw(a, b).min(cw(b, a))
}

fn oracle_closest(ids: &[NodeId], key: NodeId) -> NodeId {
    let mut best = ids[0];
    for &id in &ids[1..] {
        let (d, bd) = (dist(id, key), dist(best, key));
        if d < bd || (d == bd && raw(id) < raw(best)) {
            best = id;
        }
    }
    best
}

/// Selects `k` ids by repeated minimum of `key`, skipping `me`.
fn pick_k(me: NodeId, ids: &[NodeId], k: usize, key: impl Fn(NodeId) -> Raw) -> Vec<NodeId> {
    let mut left: Vec<NodeId> = ids.iter().copied().filter(|id| *id != me).collect();
    let mut out = Vec::new();
    while out.len() < k && !left.is_empty() {
        let (i, _) = left.iter().enumerate().min_by_key(|(_, id)| key(**id)).expect("non-empty");
        out.push(left.swap_remove(i));
    }
    out
}

// NAT rule: a hole punch fails when one side allocates a fresh port per remote
// and the other only admits the exact port it sent to.

fn per_remote_port(n: NatSpec) -> bool {
    n == NatSpec::Symmetric
}

fn port_filtering(n: NatSpec) -> bool {
    matches!(n, NatSpec::PortRestrictedCone | NatSpec::Symmetric)
}

fn oracle_direct(a: NatSpec, b: NatSpec) -> bool {
    !((per_remote_port(a) && port_filtering(b)) || (per_remote_port(b) && port_filtering(a)))
}

fn mean_connected(r: &BootstrapReport) -> Option<f64> {
    let times: Vec<f64> = r.peers.iter().filter(|p| p.alive).map(|p| p.times.connected).collect::<Option<_>>()?;
    (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64)
}

fn c1_five_nat() -> Verdict {
    let mut v = Verdict::new();
    let sc = load("paper-5nat");
    let plan = sc.peer_plan();
    let nats: BTreeSet<NatSpec> = plan.iter().map(|p| p.nat).collect();
    v.check(plan.len() == 5 && nats.len() == 4 && !nats.contains(&NatSpec::Public), || {
        format!("peer mix {:?}", plan.iter().map(|p| p.nat).collect::<Vec<_>>())
    });
    v.check(sc.public.size == 32, || format!("public overlay has {} nodes", sc.public.size));
    let began = Instant::now();
    let out = run_scenario(&sc, &opts(sc.seed, false));
    let wall = began.elapsed();
    let b = out.report.bootstrap.as_ref().expect("bootstrap report");
    v.check(out.report.outcome == Outcome::Connected && b.all_connected, || "not all connected".into());
    v.check(b.pairs.len() == 10 && b.pairs.iter().all(|p| p.outcome != "none"), || "a pair has no link".into());
    let mean = mean_connected(b);
    v.check(mean.is_some_and(|m| (10.0..=60.0).contains(&m)), || format!("mean Connected {mean:?}"));
    v.check(wall < Duration::from_secs(5), || format!("wall clock {wall:?}"));
    v.summary = format!("mean Connected {:.3} s, wall {:.2} s", mean.unwrap_or(f64::NAN), wall.as_secs_f64());
    v
}

const PHASES: [&str; 5] = ["starting", "reflected", "rendezvoused", "relaying", "connected"];

fn c2_phase_ordering() -> Verdict {
    let mut v = Verdict::new();
    let mut runs = 0;
    let mut sessions = 0;
    for (name, extra) in [("paper-5nat", 4), ("phase-ordering", 2), ("determinism", 2), ("presence", 0)] {
        let sc = load(name);
        for seed in sc.seed..=sc.seed + extra {
            let out = run_scenario(&sc, &opts(seed, true));
            let b = out.report.bootstrap.as_ref().expect("bootstrap report");
            if !b.all_connected {
                v.check(false, || format!("{name} seed {seed} did not connect"));
                continue;
            }
            runs += 1;
            for p in b.peers.iter().filter(|p| p.alive) {
                let t = p.times.columns();
                let set: Vec<f64> = t.iter().map_while(|x| *x).collect();
                v.check(set.len() == 4 && set.windows(2).all(|w| w[0] <= w[1]), || {
                    format!("{name} seed {seed} {}: {t:?}", p.name)
                });
            }
            // a `#` line opens the next world's trace; ids repeat across worlds
            let mut by_session: BTreeMap<(usize, String, String), Vec<(f64, usize)>> = BTreeMap::new();
            let mut world = 0;
            for line in &out.trace_lines {
                if line.starts_with('#') {
                    world += 1;
                    continue;
                }
                let f: Vec<&str> = line.split('|').collect();
                if f.get(1) != Some(&"phase") {
                    continue;
                }
                let rank = PHASES.iter().position(|p| *p == f[5]).expect("known phase");
                let time: f64 = f[0].parse().expect("trace time");
                by_session.entry((world, f[2].to_string(), f[3].to_string())).or_default().push((time, rank));
            }
            sessions += by_session.len();
            // churn may drop a session back to relaying; first attainments stay ordered
            for (key, seq) in &by_session {
                let mut first = [None; 5];
                for &(t, r) in seq {
                    first[r].get_or_insert(t);
                }
                let reached: Vec<f64> = first.iter().flatten().copied().collect();
                let ok = reached.windows(2).all(|w| w[0] <= w[1]) && seq.windows(2).all(|w| w[0].0 <= w[1].0);
                v.check(ok, || format!("{name} seed {seed} session {key:?}: {seq:?}"));
            }
            let ended = by_session.values().filter(|s| s.last().is_some_and(|l| l.1 == 4)).count();
            let worlds = world + 1;
            let alive = b.peers.iter().filter(|p| p.alive).count() * worlds;
            v.check(ended == alive, || format!("{name} seed {seed}: {ended} sessions end connected, {alive} alive"));
            v.check(!by_session.is_empty(), || format!("{name} seed {seed}: no phase records"));
        }
    }
    v.summary = format!("{runs} connected runs, {sessions} traced sessions");
    v
}

fn c3_nat_matrix() -> Verdict {
    let mut v = Verdict::new();
    let sc = load("nat-matrix");
    let run = run_matrix(&sc, sc.seed, false);
    let pings = run.report.relay_pings;
    v.check(pings == 10, || format!("relay exchange is {pings} pings"));
    v.check(run.observations.len() == 25, || format!("{} cells", run.observations.len()));
    let mut relayed = 0;
    for (cell, row) in run.observations.iter().zip(&run.report.cells) {
        let direct = cell.class_ab == Some(LinkClass::Direct) && cell.class_ba == Some(LinkClass::Direct);
        v.check(row.connected, || format!("{} x {} did not connect", cell.a, cell.b));
        v.check(direct == oracle_direct(cell.a, cell.b), || {
            format!("{} x {}: {:?}/{:?}", cell.a, cell.b, cell.class_ab, cell.class_ba)
        });
        if !direct {
            relayed += 1;
            let ok = row.relay_pings_sent >= 10 && row.relay_pings_received == row.relay_pings_sent;
            v.check(ok, || {
                format!("{} x {}: relay {}/{}", cell.a, cell.b, row.relay_pings_received, row.relay_pings_sent)
            });
        }
    }
    v.summary = format!("25 cells, {relayed} relayed with lossless 10-ping exchanges");
    v
}

fn c4_ring() -> Verdict {
    let mut v = Verdict::new();
    let sc = load("ring");
    let run = run_ring(&sc, sc.seed, false);
    v.check(run.observations.len() == 100, || format!("{} rings", run.observations.len()));
    let mut keys = 0;
    for (r, obs) in run.observations.iter().enumerate() {
        v.check((2..=64).contains(&obs.ids.len()), || format!("ring {r} has {} nodes", obs.ids.len()));
        for (me, right, left) in &obs.near {
            let want_right = pick_k(*me, &obs.ids, obs.k, |id| cw(*me, id));
            let want_left = pick_k(*me, &obs.ids, obs.k, |id| cw(id, *me));
            v.check(*right == want_right && *left == want_left, || format!("ring {r} node {me}: near lists differ"));
        }
        v.check(obs.routes.len() == 1000, || format!("ring {r} routed {} keys", obs.routes.len()));
        for (key, landed) in &obs.routes {
            keys += 1;
            let want = oracle_closest(&obs.ids, *key);
            v.check(landed.as_slice() == [want], || format!("ring {r} key {key}: landed at {landed:?}"));
        }
    }
    v.summary = format!("{} rings, {keys} keys", run.observations.len());
    v
}

fn c5_dht() -> Verdict {
    let mut v = Verdict::new();
    let sc = load("dht");
    let run = run_dht(&sc, sc.seed, false);
    v.check(run.observations.len() == 100, || format!("{} runs", run.observations.len()));
    let (mut multi, mut expiry, mut placement) = (0, 0, 0);
    for obs in &run.observations {
        let got: BTreeSet<&Vec<u8>> = obs.retrieved.iter().collect();
        multi += usize::from(obs.stored.len() < 2 || !obs.stored.iter().all(|s| got.contains(s)));
        let bound = obs.put_at + Duration::from_secs(u64::from(obs.ttl) + 1);
        expiry += usize::from(!obs.expires_at.is_some_and(|t| t <= bound) || obs.left_after_sweep != 0);
        placement += usize::from(obs.holders != [oracle_closest(&obs.ids, obs.key)]);
    }
    v.check(multi == 0, || format!("{multi} multi-value violations"));
    v.check(expiry == 0, || format!("{expiry} expiry violations"));
    v.check(placement == 0, || format!("{placement} placement violations"));
    v.summary = format!("{} runs, violations {multi}/{expiry}/{placement}", run.observations.len());
    v
}

fn c6_pathing() -> Verdict {
    let mut v = Verdict::new();
    let sc = load("pathing");
    let run = run_pathing(&sc, sc.seed, true);
    let p = &run.report;
    v.check(p.overlays_per_host == 3, || format!("{} overlays per host", p.overlays_per_host));
    v.check(p.sockets_per_host == 1, || format!("{} sockets per host", p.sockets_per_host));
    v.check(p.all_connected, || "private overlays did not connect".into());
    v.check(p.frames_delivered >= 10_000, || format!("{} frames delivered", p.frames_delivered));
    v.check(p.cross_path == 0 && p.cross_namespace == 0 && p.wrong_destination == 0, || {
        format!("cross-path {} cross-namespace {} misdelivered {}", p.cross_path, p.cross_namespace, p.wrong_destination)
    });
    v.check(p.duplicate_bindings == 0, || format!("{} duplicate bindings", p.duplicate_bindings));

    // From the trace alone: each internal host sends from one port, and each
    // (host, remote) pair maps to one external endpoint.
    let mut ports: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut maps: BTreeMap<(&str, &str), BTreeSet<&str>> = BTreeMap::new();
    for line in &run.trace_lines {
        let f: Vec<&str> = line.split('|').collect();
        if f.get(1) != Some(&"nat-out") {
            continue;
        }
        let (ip, port) = f[2].rsplit_once(':').expect("endpoint");
        ports.entry(ip).or_default().insert(port);
        maps.entry((ip, f[3])).or_default().insert(f[5]);
    }
    let multi_port = ports.values().filter(|s| s.len() != 1).count();
    let multi_map = maps.values().filter(|s| s.len() != 1).count();
    v.check(!maps.is_empty(), || "no NAT traffic traced".into());
    v.check(multi_port == 0, || format!("{multi_port} hosts sent from several ports"));
    v.check(multi_map == 0, || format!("{multi_map} (host, remote) pairs with several bindings"));
    v.summary = format!(
        "{} frames, {} NATed hosts, {} (host, remote) pairs",
        p.frames_delivered,
        ports.len(),
        maps.len()
    );
    v
}

/// Largest count of `log` entries in any window `[t, t + 10 s)` opening at an entry.
fn busiest_window(log: &[SimTime]) -> usize {
    log.iter().map(|t| log.iter().filter(|u| *u >= t && **u < *t + Duration::from_secs(10)).count()).max().unwrap_or(0)
}

fn c7_presence() -> Verdict {
    let mut v = Verdict::new();
    let sc = load("presence");
    let domains = sc.federation.server_domains(sc.provider);
    v.check(domains.len() == 2, || format!("{} federation servers", domains.len()));
    v.check(sc.federation.client_latency_ms == 25, || "client latency".into());
    v.check(sc.federation.client_latency_ms * u64::from(sc.federation.factor) == 75, || "federation latency".into());
    let plan = sc.peer_plan();
    let used: BTreeSet<_> = plan.iter().filter_map(|p| p.domain.clone()).collect();
    v.check(used.len() == 2, || "peers do not span both domains".into());
    let same: Vec<_> = plan
        .iter()
        .cloned()
        .map(|mut p| {
            p.domain = Some(domains[0].clone());
            p
        })
        .collect();
    let mut means = Vec::new();
    let mut busiest = 0;
    for (label, peers) in [("cross-domain", &plan), ("same-domain", &same)] {
        let run = run_bootstrap_scenario(&sc, peers, sc.seed, sc.max_virtual_time, false);
        v.check(run.report.all_connected, || format!("{label} run did not connect"));
        for (p, h) in &run.peers {
            let log = run.world.peer(*h).privates[0].session.provider().request_log();
            let n = busiest_window(log);
            busiest = busiest.max(n);
            v.check(n <= 10, || format!("{label} {}: {n} requests in 10 s", p.name));
        }
        means.push(mean_connected(&run.report).unwrap_or(f64::NAN));
    }
    v.check(means[0] > means[1], || format!("cross-domain {:.3} s vs same-domain {:.3} s", means[0], means[1]));
    v.summary = format!(
        "Connected cross-domain {:.3} s > same-domain {:.3} s, busiest window {busiest}",
        means[0], means[1]
    );
    v
}

fn c8_determinism() -> Verdict {
    let mut v = Verdict::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scenarios_dir())
        .expect("scenarios dir")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    let mut kinds = BTreeSet::new();
    for path in &paths {
        let sc = Scenario::load(path).expect("bundled scenario parses");
        kinds.insert(sc.kind.as_str());
        let a = run_scenario(&sc, &opts(sc.seed, false)).report;
        let b = run_scenario(&sc, &opts(sc.seed, false)).report;
        v.check(a.to_json() == b.to_json(), || format!("{}: reports differ", path.display()));
        v.check(a.trace_hash == b.trace_hash && a.trace_records > 0, || format!("{}: trace hashes differ", path.display()));
    }
    v.check(kinds.len() == 5, || format!("bundled kinds {kinds:?}"));
    v.summary = format!("{} scenarios run twice", paths.len());
    v
}

#[test]
fn acceptance_criteria() {
    type Criterion = (&'static str, fn() -> Verdict);
    let criteria: [Criterion; 8] = [
        ("1 five-NAT bootstrap", c1_five_nat),
        ("2 phase ordering", c2_phase_ordering),
        ("3 NAT matrix", c3_nat_matrix),
        ("4 ring oracle", c4_ring),
        ("5 DHT soft state", c5_dht),
        ("6 pathing isolation", c6_pathing),
        ("7 presence parity", c7_presence),
        ("8 determinism", c8_determinism),
    ];
    let mut failed = Vec::new();
    println!();
    for (name, run) in criteria {
        let v = run();
        if v.problems.is_empty() {
            println!("PASS criterion {name}: {}", v.summary);
        } else {
            println!("FAIL criterion {name}: {}", v.summary);
            for p in v.problems.iter().take(10) {
                println!("    {p}");
            }
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn bundled_scenarios_cover_every_kind() {
    let kinds: BTreeSet<&str> = std::fs::read_dir(scenarios_dir())
        .expect("scenarios dir")
        .map(|e| Scenario::load(&e.expect("dir entry").path()).expect("parses").kind.as_str())
        .collect();
    assert_eq!(kinds.len(), 5);
}

#[test]
fn ring_oracle_agrees_on_small_cases() {
    let ids: Vec<NodeId> = [10u128, 20, 30, 200].into_iter().map(NodeId::from_u128).collect();
    let me = ids[0];
    assert_eq!(pick_k(me, &ids, 2, |id| cw(me, id)), vec![ids[1], ids[2]]);
    assert_eq!(pick_k(me, &ids, 2, |id| cw(id, me)), vec![ids[3], ids[2]]);
    assert_eq!(oracle_closest(&ids, NodeId::from_u128(25)), ids[1]);
    let top = NodeId::from_bytes([0xff; ID_BYTES]);
    assert_eq!(oracle_closest(&[NodeId::from_u128(5), top], NodeId::ZERO), top);
}
