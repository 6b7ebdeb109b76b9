use std::collections::BTreeSet;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bootstrap::{ProviderSetup, SessionConfig, World, AUDIT_TAG};
use crate::dht::DhtEvent;
use crate::identifiers::{Namespace, NodeId};
use crate::overlay::{closeness, k_nearest, DeliveryMode, LinkClass};
use crate::report::{DhtReport, DhtRow, MatrixReport, MatrixRow, PathingReport, RingReport, RingRow};
use crate::simnet::{Attachment, Endpoint, HostId, NetworkId, SimTime};

use super::{secs, NatSpec, Scenario};

/// What a check run leaves behind besides its report.
pub struct CheckRun<R, O> {
    pub report: R,
    pub observations: Vec<O>,
    /// Per-world trace hashes, in run order.
    pub trace_hashes: Vec<String>,
    pub trace_records: u64,
    pub trace_lines: Vec<String>,
    pub virtual_time: f64,
}

impl<R, O> CheckRun<R, O> {
    fn new(report: R) -> Self {
        CheckRun {
            report,
            observations: Vec::new(),
            trace_hashes: Vec::new(),
            trace_records: 0,
            trace_lines: Vec::new(),
            virtual_time: 0.0,
        }
    }

    fn absorb(&mut self, label: &str, w: &World) {
        let t = w.net().trace();
        self.trace_hashes.push(t.hash_hex());
        self.trace_records += t.len();
        if !t.lines().is_empty() {
            self.trace_lines.push(format!("# {label}"));
            self.trace_lines.extend(t.lines().iter().cloned());
        }
        self.virtual_time += w.now().as_secs_f64();
    }
}

/// Starts `size` public overlay nodes spread over networks `1..=networks` and
/// returns their hosts; the first `seeds` nodes are the join points.
fn public_ring(w: &mut World, sc: &Scenario, size: usize, seeds: usize) -> (Vec<HostId>, Vec<Endpoint>) {
    let cfg = sc.timers.overlay(sc.public.k);
    let mut hosts = Vec::new();
    let mut joins = Vec::new();
    for i in 0..size {
        let h = w.add_peer(Attachment::Public, NetworkId(1 + (i as u16 % sc.public.networks))).expect("public host");
        w.start_public(h, cfg.clone(), joins.clone());
        if i < seeds {
            joins.push(w.peer(h).local());
        }
        hosts.push(h);
    }
    (hosts, joins)
}

fn public_id(w: &World, h: HostId) -> NodeId {
    w.peer(h).public.as_ref().expect("public node").node.id()
}

/// The id in `ids` closest to `key` by the routing order.
fn closest(ids: &[NodeId], key: NodeId) -> NodeId {
    *ids.iter().min_by_key(|id| closeness(**id, key)).expect("non-empty ring")
}

/// One cell of the NAT matrix, seen from both peers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatrixCell {
    pub a: NatSpec,
    pub b: NatSpec,
    pub class_ab: Option<LinkClass>,
    pub class_ba: Option<LinkClass>,
}

/// Every ordered pair of attachments, two private peers per run.
pub fn run_matrix(sc: &Scenario, seed: u64, keep_trace: bool) -> CheckRun<MatrixReport, MatrixCell> {
    let mut run = CheckRun::new(MatrixReport { relay_pings: sc.timers.relay_pings, cells: Vec::new() });
    let namespace = sc.namespace();
    for (n, (a, b)) in NatSpec::ALL.iter().flat_map(|a| NatSpec::ALL.iter().map(move |b| (*a, *b))).enumerate() {
        let mut w = World::new(sc.latency.net_config(seed.wrapping_add(n as u64), keep_trace));
        let size = sc.public.size.max(1);
        let (_, joins) = public_ring(&mut w, sc, size, sc.public.seeds.clamp(1, size));
        w.run_until(SimTime::from_secs_f64(sc.public.warmup));
        let session = SessionConfig {
            expected_peers: Some(1),
            ping_timeout: secs(sc.timers.ping_timeout),
            relay_pings: sc.timers.relay_pings,
        };
        let mut pair = Vec::new();
        for spec in [a, b] {
            let h = w.add_peer(spec.attachment(), NetworkId(0)).expect("peer host");
            w.start_public(h, sc.timers.overlay(sc.public.k), joins.clone());
            let setup = ProviderSetup::Dht(sc.timers.dht_provider());
            w.add_private(h, namespace.clone(), setup, session.clone(), sc.timers.overlay(sc.timers.private_k));
            w.start_privates(h);
            pair.push(h);
        }
        let limit = w.now() + secs(sc.matrix.cell_time);
        let connected = w.run_while(limit, Duration::from_millis(500), |w| {
            !pair.iter().all(|h| w.peer(*h).privates[0].session.is_connected())
        });
        let settle = w.now() + secs(sc.matrix.settle);
        w.run_until(settle);
        let ids: Vec<NodeId> = pair.iter().map(|h| w.peer(*h).privates[0].node.id()).collect();
        let class = |from: usize, to: usize| w.peer(pair[from]).privates[0].node.link(&ids[to]).map(|l| l.class());
        let (class_ab, class_ba) = (class(0, 1), class(1, 0));
        let (mut sent, mut received) = (0, 0);
        for h in &pair {
            if let Some((_, p)) = w.peer(*h).privates[0].session.relay_probe() {
                sent += p.sent;
                received += p.received;
            }
        }
        run.report.cells.push(MatrixRow {
            a,
            b,
            connected,
            direct: class_ab == Some(LinkClass::Direct) && class_ba == Some(LinkClass::Direct),
            link: class_ab.map_or("none", LinkClass::as_str).to_string(),
            relay_pings_sent: sent / 2,
            relay_pings_received: received / 2,
        });
        run.observations.push(MatrixCell { a, b, class_ab, class_ba });
        run.absorb(&format!("cell {a} x {b}"), &w);
    }
    run
}

/// One stabilized ring: every member's near lists and where each key landed.
#[derive(Clone, Debug)]
pub struct RingObservation {
    pub k: usize,
    pub ids: Vec<NodeId>,
    /// (node, right, left) as the node holds them, nearest first.
    pub near: Vec<(NodeId, Vec<NodeId>, Vec<NodeId>)>,
    /// (key, node ids it was delivered at).
    pub routes: Vec<(NodeId, Vec<NodeId>)>,
}

pub fn run_ring(sc: &Scenario, seed: u64, keep_trace: bool) -> CheckRun<RingReport, RingObservation> {
    let mut run =
        CheckRun::new(RingReport { rings: Vec::new(), near_mismatches: 0, misrouted: 0, undelivered: 0 });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = sc.public.k;
    for r in 0..sc.ring.rings {
        let n = rng.random_range(sc.ring.min_nodes..=sc.ring.max_nodes);
        let mut w = World::new(sc.latency.net_config(rng.random(), keep_trace));
        let (hosts, _) = public_ring(&mut w, sc, n, sc.public.seeds.clamp(1, n));
        w.run_until(SimTime::ZERO + secs(sc.ring.settle));
        let ids: Vec<NodeId> = hosts.iter().map(|h| public_id(&w, *h)).collect();
        let mut near = Vec::new();
        let mut mismatches = 0;
        for h in &hosts {
            let node = &w.peer(*h).public.as_ref().expect("public node").node;
            let (right, left) = node.near();
            if (right.clone(), left.clone()) != k_nearest(node.id(), ids.iter().copied(), k) {
                mismatches += 1;
            }
            near.push((node.id(), right, left));
        }

        for h in &hosts {
            w.peer_mut(*h).enable_audit();
        }
        let mut keys = Vec::new();
        for q in 0..sc.ring.keys {
            let key = NodeId::random(&mut rng);
            let src = hosts[rng.random_range(0..hosts.len())];
            let mut payload = vec![AUDIT_TAG];
            payload.extend_from_slice(&(q as u32).to_be_bytes());
            w.with_peer(src, |p, now, net| p.route_app(now, net, 0, key, DeliveryMode::Closest, payload));
            keys.push(key);
        }
        let t = w.now() + Duration::from_secs(10);
        w.run_until(t);
        let mut landed: Vec<Vec<NodeId>> = vec![Vec::new(); keys.len()];
        for h in &hosts {
            let at = public_id(&w, *h);
            for d in w.peer_mut(*h).take_audit() {
                if d.slot == 0 && d.payload.len() == 5 {
                    let q = u32::from_be_bytes(d.payload[1..5].try_into().expect("4 bytes")) as usize;
                    if let Some(slot) = landed.get_mut(q) {
                        slot.push(at);
                    }
                }
            }
        }
        let mut misrouted = 0;
        let mut undelivered = 0;
        for (key, at) in keys.iter().zip(&landed) {
            match at.as_slice() {
                [] => undelivered += 1,
                [one] if *one == closest(&ids, *key) => {}
                _ => misrouted += 1,
            }
        }
        run.report.rings.push(RingRow { nodes: n, near_mismatches: mismatches, keys: keys.len(), misrouted, undelivered });
        run.report.near_mismatches += mismatches;
        run.report.misrouted += misrouted;
        run.report.undelivered += undelivered;
        run.observations.push(RingObservation { k, ids, near, routes: keys.into_iter().zip(landed).collect() });
        run.absorb(&format!("ring {r}"), &w);
    }
    run
}

/// One soft-state run: who held the key and what a third node read back.
#[derive(Clone, Debug)]
pub struct DhtObservation {
    pub ids: Vec<NodeId>,
    pub key: NodeId,
    pub stored: Vec<Vec<u8>>,
    pub retrieved: Vec<Vec<u8>>,
    pub holders: Vec<NodeId>,
    /// Latest lease expiry seen on any holder.
    pub expires_at: Option<SimTime>,
    /// Entries for the key still held one second after that expiry.
    pub left_after_sweep: usize,
    /// Virtual time the puts were issued.
    pub put_at: SimTime,
    pub ttl: u32,
}

pub fn run_dht(sc: &Scenario, seed: u64, keep_trace: bool) -> CheckRun<DhtReport, DhtObservation> {
    let mut run = CheckRun::new(DhtReport {
        runs: Vec::new(),
        multi_value_violations: 0,
        expiry_violations: 0,
        placement_violations: 0,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ttl = sc.dht.ttl;
    for r in 0..sc.dht.runs {
        let n = sc.dht.nodes;
        let mut w = World::new(sc.latency.net_config(rng.random(), keep_trace));
        let (hosts, _) = public_ring(&mut w, sc, n, sc.public.seeds.clamp(1, n));
        w.run_until(SimTime::ZERO + secs(sc.dht.settle));
        let ids: Vec<NodeId> = hosts.iter().map(|h| public_id(&w, *h)).collect();
        let key = NodeId::random(&mut rng);
        let mut picks = hosts.clone();
        picks.shuffle(&mut rng);
        let (a, b, c) = (picks[0], picks[1], picks[2]);
        let stored = vec![format!("origin-a-{r}").into_bytes(), format!("origin-b-{r}").into_bytes()];
        let put_at = w.now();
        for (h, v) in [(a, &stored[0]), (b, &stored[1])] {
            let v = v.clone();
            w.with_peer(h, |p, now, net| p.dht_put(now, net, key, v, ttl)).expect("valid put");
        }
        w.run_until(put_at + Duration::from_secs(5));
        w.with_peer(c, |p, now, net| p.dht_get(now, net, key));
        let mut retrieved = Vec::new();
        let deadline = w.now() + Duration::from_secs(12);
        while w.now() < deadline && retrieved.is_empty() {
            for ev in w.peer_mut(c).take_dht_results() {
                if let DhtEvent::GetDone { values, .. } = ev {
                    retrieved = values;
                }
            }
            if retrieved.is_empty() {
                let t = w.now() + Duration::from_millis(250);
                w.run_until(t);
            }
        }
        let mut holders = Vec::new();
        let mut expires_at = None;
        for h in &hosts {
            let store = w.peer(*h).public.as_ref().expect("public node").dht.store();
            let entries: Vec<_> = store.entries().filter(|e| e.key == key).collect();
            if !entries.is_empty() {
                holders.push(public_id(&w, *h));
            }
            for e in entries {
                expires_at = expires_at.max(Some(e.expires_at));
            }
        }
        let mut left_after_sweep = 0;
        if let Some(t) = expires_at {
            w.run_until(t + Duration::from_secs(1));
            for h in &hosts {
                let store = w.peer(*h).public.as_ref().expect("public node").dht.store();
                left_after_sweep += store.entries().filter(|e| e.key == key).count();
            }
        }
        let found: BTreeSet<&Vec<u8>> = retrieved.iter().collect();
        let values_found = stored.iter().filter(|v| found.contains(v)).count();
        let on_closest = holders == [closest(&ids, key)];
        let expired_in_time = expires_at.is_some_and(|t| t <= put_at + Duration::from_secs(ttl as u64 + 1))
            && left_after_sweep == 0;
        run.report.multi_value_violations += usize::from(values_found != stored.len());
        run.report.placement_violations += usize::from(!on_closest);
        run.report.expiry_violations += usize::from(!expired_in_time);
        run.report.runs.push(DhtRow { nodes: n, values_found, holders: holders.len(), on_closest, expired_in_time });
        run.observations.push(DhtObservation {
            ids,
            key,
            stored,
            retrieved,
            holders,
            expires_at,
            left_after_sweep,
            put_at,
            ttl,
        });
        run.absorb(&format!("dht run {r}"), &w);
    }
    run
}

/// Audit payload: tag, overlay slot, namespace key (zero for the public overlay), destination id.
fn audit_payload(slot: u8, namespace: NodeId, dst: NodeId) -> Vec<u8> {
    let mut p = vec![AUDIT_TAG, slot];
    p.extend_from_slice(&namespace.to_bytes());
    p.extend_from_slice(&dst.to_bytes());
    p
}

pub fn run_pathing(sc: &Scenario, seed: u64, keep_trace: bool) -> CheckRun<PathingReport, ()> {
    let spec = &sc.pathing;
    let mut w = World::new(sc.latency.net_config(seed, keep_trace));
    let size = sc.public.size.max(1);
    let (_, joins) = public_ring(&mut w, sc, size, sc.public.seeds.clamp(1, size));
    w.run_until(SimTime::from_secs_f64(sc.public.warmup));
    let namespaces: Vec<Namespace> =
        spec.namespaces.iter().map(|n| Namespace::new(n, "1").expect("validated namespace")).collect();
    let session = SessionConfig {
        expected_peers: Some(spec.hosts.len() - 1),
        ping_timeout: secs(sc.timers.ping_timeout),
        relay_pings: sc.timers.relay_pings,
    };
    let mut hosts = Vec::new();
    for nat in &spec.hosts {
        let h = w.add_peer(nat.attachment(), NetworkId(0)).expect("peer host");
        w.start_public(h, sc.timers.overlay(sc.public.k), joins.clone());
        for ns in &namespaces {
            let setup = ProviderSetup::Dht(sc.timers.dht_provider());
            w.add_private(h, ns.clone(), setup, session.clone(), sc.timers.overlay(sc.timers.private_k));
        }
        w.start_privates(h);
        w.peer_mut(h).enable_audit();
        hosts.push(h);
    }
    let start = w.now();
    let limit = start + secs(sc.max_virtual_time);
    let all_connected = w.run_while(limit, Duration::from_millis(500), |w| {
        !hosts.iter().all(|h| w.peer(*h).privates.iter().all(|p| p.session.is_connected()))
    });

    let slots = namespaces.len() + 1;
    let key_of = |slot: usize| if slot == 0 { NodeId::ZERO } else { namespaces[slot - 1].key() };
    let id_of = |w: &World, h: HostId, slot: usize| match slot {
        0 => public_id(w, h),
        s => w.peer(h).privates[s - 1].node.id(),
    };
    let mut report = PathingReport {
        hosts: hosts.len(),
        overlays_per_host: slots,
        sockets_per_host: hosts.iter().map(|h| w.net().bound_ports(*h).len()).max().unwrap_or(0),
        all_connected,
        frames_sent: 0,
        frames_delivered: 0,
        cross_path: 0,
        cross_namespace: 0,
        wrong_destination: 0,
        duplicate_bindings: w.extra_bindings(),
        binding_checks: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9a7);
    // take whatever bootstrap traffic left in the audit logs
    for h in &hosts {
        w.peer_mut(*h).take_audit();
    }
    while report.frames_delivered < spec.frames && w.now() < limit {
        for (i, h) in hosts.iter().enumerate() {
            for slot in 0..slots {
                for _ in 0..spec.burst {
                    let mut j = rng.random_range(0..hosts.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    let dst = id_of(&w, hosts[j], slot);
                    let payload = audit_payload(slot as u8, key_of(slot), dst);
                    w.with_peer(*h, |p, now, net| p.route_app(now, net, slot, dst, DeliveryMode::Exact, payload));
                    report.frames_sent += 1;
                }
            }
        }
        let t = (w.now() + Duration::from_secs(1)).min(limit);
        w.run_until(t);
        report.duplicate_bindings += w.extra_bindings();
        report.binding_checks += 1;
        for h in &hosts {
            let ids: Vec<NodeId> = (0..slots).map(|s| id_of(&w, *h, s)).collect();
            for d in w.peer_mut(*h).take_audit() {
                report.frames_delivered += 1;
                let (Some(&slot), Some(ns), Some(dst)) =
                    (d.payload.get(1), d.payload.get(2..22), d.payload.get(22..42))
                else {
                    report.cross_path += 1;
                    continue;
                };
                if slot as usize != d.slot {
                    report.cross_path += 1;
                }
                if ns != key_of(d.slot).to_bytes().as_slice() {
                    report.cross_namespace += 1;
                }
                if dst != ids[d.slot].to_bytes().as_slice() {
                    report.wrong_destination += 1;
                }
            }
        }
    }
    let mut run = CheckRun::new(report);
    run.absorb("pathing", &w);
    run
}
