use std::collections::BTreeMap;
use std::time::Duration;

use crate::bootstrap::{ProviderSetup, SessionConfig, World};
use crate::rendezvous::ProviderKind;
use crate::report::{BootstrapReport, PairRow, PeerRow, PhaseRow};
use crate::simnet::{Attachment, Endpoint, HostId, NetworkId, SimTime};

use super::{secs, PeerPlan, RosterSpec, Scenario, StopCondition};

/// First network id used by federation servers; peers sit below it.
const FEDERATION_NETWORK: u16 = 10;
const STUN_NETWORK: u16 = 20;

/// A finished bootstrap run with its world kept for inspection.
pub struct BootstrapRun {
    pub world: World,
    pub peers: Vec<(PeerPlan, HostId)>,
    /// When the peers were created, after the public warmup.
    pub start: SimTime,
    pub end: SimTime,
    pub report: BootstrapReport,
}

impl BootstrapRun {
    pub fn host(&self, name: &str) -> Option<HostId> {
        self.peers.iter().find(|(p, _)| p.name == name).map(|(_, h)| *h)
    }
}

/// Builds and runs a bootstrap scenario with `plan` as its peers.
pub fn run_bootstrap_scenario(sc: &Scenario, plan: &[PeerPlan], seed: u64, limit: f64, keep_trace: bool) -> BootstrapRun {
    let domains = sc.federation.server_domains(sc.provider);
    let mut config = sc.latency.net_config(seed, keep_trace);
    let client = Duration::from_millis(sc.federation.client_latency_ms);
    for (i, _) in domains.iter().enumerate() {
        let server = NetworkId(FEDERATION_NETWORK + i as u16);
        for n in 0..FEDERATION_NETWORK {
            config.set_latency(NetworkId(n), server, client);
        }
        for j in i + 1..domains.len() {
            config.set_latency(server, NetworkId(FEDERATION_NETWORK + j as u16), client * sc.federation.factor);
        }
    }
    let mut w = World::new(config);

    let public_cfg = sc.timers.overlay(sc.public.k);
    let mut seeds: Vec<Endpoint> = Vec::new();
    let natted_from = sc.public.size - sc.public.nat_mix.len();
    for i in 0..sc.public.size {
        let attachment = match i.checked_sub(natted_from) {
            Some(j) => Attachment::NewNat(sc.public.nat_mix[j]),
            None => Attachment::Public,
        };
        let network = NetworkId(1 + (i as u16 % sc.public.networks));
        let h = w.add_peer(attachment, network).expect("public host");
        w.start_public(h, public_cfg.clone(), seeds.clone());
        if i < sc.public.seeds {
            seeds.push(w.peer(h).local());
        }
    }
    w.run_until(SimTime::from_secs_f64(sc.public.warmup));

    let stun = (sc.public.size == 0 || sc.provider == ProviderKind::Presence)
        .then(|| w.add_stun_server(NetworkId(STUN_NETWORK)).expect("stun host"));
    for (i, d) in domains.iter().enumerate() {
        w.add_federation_server(d, NetworkId(FEDERATION_NETWORK + i as u16)).expect("federation host");
    }

    let start = w.now();
    let namespace = sc.namespace();
    let setup = match sc.provider {
        ProviderKind::Dht => ProviderSetup::Dht(sc.timers.dht_provider()),
        ProviderKind::Presence => ProviderSetup::Presence(sc.timers.presence_provider()),
    };
    let session = SessionConfig {
        expected_peers: Some(plan.len().saturating_sub(1)),
        ping_timeout: secs(sc.timers.ping_timeout),
        relay_pings: sc.timers.relay_pings,
    };
    let mut peers = Vec::new();
    let mut accounts: Vec<(String, String)> = Vec::new();
    for p in plan {
        let h = w.add_peer(p.nat.attachment(), NetworkId(p.network)).expect("peer host");
        if let Some(ep) = stun {
            w.attach_stun(h, ep);
        }
        if sc.provider == ProviderKind::Presence {
            let domain = p.domain.clone().unwrap_or_else(|| domains[0].clone());
            let account = w.federation_mut(&domain).expect("validated domain").add_account(&p.name);
            let server = w.federation_endpoint(&domain).expect("validated domain");
            w.attach_xmpp(h, &account, server).expect("xmpp port");
            accounts.push((domain, account));
        }
        w.add_private(h, namespace.clone(), setup.clone(), session.clone(), sc.timers.overlay(sc.timers.private_k));
        peers.push((p.clone(), h));
    }
    if sc.federation.roster == RosterSpec::Clique {
        for (domain, owner) in &accounts {
            for (_, contact) in &accounts {
                w.federation_mut(domain).expect("validated domain").subscribe(owner, contact);
            }
        }
    }

    let mut order: Vec<usize> = (0..peers.len()).collect();
    order.sort_by(|a, b| peers[*a].0.start.total_cmp(&peers[*b].0.start));
    let mut churn: Vec<(f64, Vec<String>)> = sc.churn.iter().map(|c| (c.at, c.kill.clone())).collect();
    churn.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut churn = churn.into_iter().peekable();
    let mut pending_starts = order.into_iter().peekable();
    let limit = start + secs(limit);
    let step = Duration::from_millis(500);

    loop {
        while let Some(&i) = pending_starts.peek() {
            let at = start + secs(peers[i].0.start);
            if at > w.now() {
                break;
            }
            let h = peers[i].1;
            pending_starts.next();
            // churn may kill a host before its start time
            if !w.is_alive(h) {
                continue;
            }
            if sc.public.size > 0 {
                w.start_public(h, public_cfg.clone(), seeds.clone());
            }
            w.start_privates(h);
        }
        while churn.peek().is_some_and(|(at, _)| start + secs(*at) <= w.now()) {
            let (_, names) = churn.next().expect("peeked");
            for n in names {
                if let Some((_, h)) = peers.iter().find(|(p, _)| p.name == n) {
                    w.kill(*h);
                }
            }
            let alive: Vec<HostId> = peers.iter().map(|(_, h)| *h).filter(|h| w.is_alive(*h)).collect();
            for h in &alive {
                w.peer_mut(*h).privates[0].session.set_expected_peers(Some(alive.len() - 1));
            }
        }
        let next_event = [
            pending_starts.peek().map(|i| start + secs(peers[*i].0.start)),
            churn.peek().map(|(at, _)| start + secs(*at)),
        ]
        .into_iter()
        .flatten()
        .min();
        let until = next_event.map_or(limit, |t| t.min(limit));
        let waiting = next_event.is_some();
        let stop_early = sc.stop == StopCondition::AllConnected && !waiting;
        let hosts: Vec<HostId> = peers.iter().map(|(_, h)| *h).collect();
        let done = w.run_while(until, step, |w| !(stop_early && all_connected(w, &hosts)));
        if (done && stop_early) || w.now() >= limit {
            break;
        }
    }
    let end = w.now();
    let report = report(&w, &peers, sc.provider);
    BootstrapRun { world: w, peers, start, end, report }
}

fn all_connected(w: &World, hosts: &[HostId]) -> bool {
    hosts.iter().filter(|h| w.is_alive(**h)).all(|h| w.peer(*h).privates[0].session.is_connected())
}

/// Largest number of entries of `log` inside any half-open `window`.
pub(crate) fn max_in_window(log: &[SimTime], window: Duration) -> usize {
    let mut times = log.to_vec();
    times.sort();
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..times.len() {
        while times[hi] - times[lo] >= window {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best
}

fn report(w: &World, peers: &[(PeerPlan, HostId)], provider: ProviderKind) -> BootstrapReport {
    let mut rows = Vec::new();
    let mut ids = BTreeMap::new();
    for (plan, h) in peers {
        let inst = &w.peer(*h).privates[0];
        ids.insert(plan.name.clone(), inst.node.id());
        let s = &inst.session;
        let t = s.times();
        let since = |x: Option<SimTime>| match (x, s.started_at()) {
            (Some(x), Some(st)) => Some((x - st).as_secs_f64()),
            _ => None,
        };
        let probe = s.relay_probe().map(|(_, p)| p);
        rows.push(PeerRow {
            name: plan.name.clone(),
            nat: plan.nat,
            domain: (provider == ProviderKind::Presence).then(|| plan.domain.clone()).flatten(),
            alive: w.is_alive(*h),
            phase: s.phase(),
            times: PhaseRow {
                reflection: since(t.reflected),
                rendezvous: since(t.rendezvoused),
                relaying: since(t.relaying),
                connected: since(t.connected),
            },
            first_relay_rtt_ms: s.first_relay_rtt().map(|d| d.as_secs_f64() * 1e3),
            relay_ping_mean_ms: s.relay_ping_mean().map(|d| d.as_secs_f64() * 1e3),
            relay_pings_sent: probe.map_or(0, |p| p.sent),
            relay_pings_received: probe.map_or(0, |p| p.received),
            max_requests_per_10s: (provider == ProviderKind::Presence)
                .then(|| max_in_window(s.provider().request_log(), Duration::from_secs(10))),
        });
    }
    let mut pairs = Vec::new();
    for (i, (a, ha)) in peers.iter().enumerate() {
        for (b, _) in &peers[i + 1..] {
            let outcome = w
                .peer(*ha)
                .privates[0]
                .node
                .link(&ids[&b.name])
                .map_or("none", |l| l.class().as_str());
            pairs.push(PairRow { a: a.name.clone(), b: b.name.clone(), outcome: outcome.to_string() });
        }
    }
    let alive: Vec<&PeerRow> = rows.iter().filter(|r| r.alive).collect();
    let all_connected = all_connected(w, &peers.iter().map(|(_, h)| *h).collect::<Vec<_>>());
    let all_connected_at = if all_connected {
        alive.iter().map(|r| r.times.connected).try_fold(0.0f64, |m, c| c.map(|c| m.max(c)))
    } else {
        None
    };
    let phases_ordered = peers.iter().all(|(_, h)| w.peer(*h).privates[0].session.times().is_ordered());
    BootstrapReport {
        provider,
        mean: PhaseRow::mean(rows.iter().map(|r| &r.times)),
        peers: rows,
        pairs,
        all_connected,
        phases_ordered,
        all_connected_at,
    }
}
