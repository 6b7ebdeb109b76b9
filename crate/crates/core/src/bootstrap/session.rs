use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codec::{Reader, Writer};
use crate::identifiers::{Namespace, NodeId, TransportAddress};
use crate::overlay::{DeliveryMode, LinkClass, LinkPath, OverlayEvent, OverlayNode, PayloadProtocol};
use crate::rendezvous::{ProviderCommand, ProviderEvent, ProviderInput, RendezvousProvider};
use crate::simnet::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Starting,
    Reflected,
    Rendezvoused,
    Relaying,
    Connected,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Starting => "starting",
            Phase::Reflected => "reflected",
            Phase::Rendezvoused => "rendezvoused",
            Phase::Relaying => "relaying",
            Phase::Connected => "connected",
        }
    }
}

/// First attainment of each phase. Later phases never precede earlier ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhaseTimes {
    pub reflected: Option<SimTime>,
    pub rendezvoused: Option<SimTime>,
    pub relaying: Option<SimTime>,
    pub connected: Option<SimTime>,
}

impl PhaseTimes {
    pub fn get(&self, phase: Phase) -> Option<SimTime> {
        match phase {
            Phase::Starting => None,
            Phase::Reflected => self.reflected,
            Phase::Rendezvoused => self.rendezvoused,
            Phase::Relaying => self.relaying,
            Phase::Connected => self.connected,
        }
    }

    fn slot(&mut self, phase: Phase) -> Option<&mut Option<SimTime>> {
        match phase {
            Phase::Starting => None,
            Phase::Reflected => Some(&mut self.reflected),
            Phase::Rendezvoused => Some(&mut self.rendezvoused),
            Phase::Relaying => Some(&mut self.relaying),
            Phase::Connected => Some(&mut self.connected),
        }
    }

    pub fn is_ordered(&self) -> bool {
        let seq = [self.reflected, self.rendezvoused, self.relaying, self.connected];
        let set: Vec<SimTime> = seq.iter().map_while(|t| *t).collect();
        set.len() == seq.iter().filter(|t| t.is_some()).count() && set.windows(2).all(|w| w[0] <= w[1])
    }
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    /// Connected needs at least this many discovered peers; `None` accepts any non-empty set.
    pub expected_peers: Option<usize>,
    pub ping_timeout: Duration,
    /// Pings sent back to back over the first relayed link.
    pub relay_pings: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { expected_peers: None, ping_timeout: Duration::from_secs(3), relay_pings: 10 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PeerState {
    pub addresses: Vec<TransportAddress>,
    pub remote: Option<NodeId>,
    /// Link path on which a connectivity ping last round-tripped.
    pub verified: Option<LinkPath>,
    checking: bool,
}

/// Outcome of a batch of pings to one remote.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProbeResult {
    pub sent: u32,
    pub received: u32,
    pub rtts: Vec<Duration>,
    pub class: Option<LinkClass>,
}

impl ProbeResult {
    pub fn mean_rtt(&self) -> Option<Duration> {
        (!self.rtts.is_empty()).then(|| self.rtts.iter().sum::<Duration>() / self.rtts.len() as u32)
    }
}

#[derive(Clone, Debug)]
enum PingPurpose {
    Check(TransportAddress),
    Probe(NodeId),
}

#[derive(Clone, Debug)]
struct Outstanding {
    purpose: PingPurpose,
    sent: SimTime,
    path: Option<LinkPath>,
}

const PING: u8 = 0x01;
const PONG: u8 = 0x02;

/// Drives one private overlay instance through reflection, rendezvous,
/// relaying and connection.
///
/// Peers are keyed by their relay address (`brunet://` or `xmpp://`), the one
/// address every record carries.
pub struct BootstrapSession {
    namespace: Namespace,
    config: SessionConfig,
    provider: Box<dyn RendezvousProvider>,
    started_at: Option<SimTime>,
    phase: Phase,
    times: PhaseTimes,
    peers: BTreeMap<TransportAddress, PeerState>,
    announced: Vec<TransportAddress>,
    outstanding: BTreeMap<u64, Outstanding>,
    probes: BTreeMap<NodeId, ProbeResult>,
    relay_probe: Option<NodeId>,
    rng: ChaCha8Rng,
    commands: VecDeque<ProviderCommand>,
    log: Vec<(SimTime, Phase)>,
}

impl BootstrapSession {
    pub fn new(namespace: Namespace, provider: Box<dyn RendezvousProvider>, config: SessionConfig, seed: u64) -> Self {
        BootstrapSession {
            namespace,
            config,
            provider,
            started_at: None,
            phase: Phase::Starting,
            times: PhaseTimes::default(),
            peers: BTreeMap::new(),
            announced: Vec::new(),
            outstanding: BTreeMap::new(),
            probes: BTreeMap::new(),
            relay_probe: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            commands: VecDeque::new(),
            log: Vec::new(),
        }
    }

    pub fn namespace(&self) -> &Namespace {
        &self.namespace
    }

    pub fn provider(&self) -> &dyn RendezvousProvider {
        self.provider.as_ref()
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn times(&self) -> PhaseTimes {
        self.times
    }

    pub fn started_at(&self) -> Option<SimTime> {
        self.started_at
    }

    /// Phase changes in order, including re-entries after churn.
    pub fn phase_log(&self) -> &[(SimTime, Phase)] {
        &self.log
    }

    pub fn peers(&self) -> &BTreeMap<TransportAddress, PeerState> {
        &self.peers
    }

    pub fn probes(&self) -> &BTreeMap<NodeId, ProbeResult> {
        &self.probes
    }

    /// The probe sent over the first relayed link, with its remote.
    pub fn relay_probe(&self) -> Option<(NodeId, &ProbeResult)> {
        self.relay_probe.and_then(|r| self.probes.get(&r).map(|p| (r, p)))
    }

    /// Round-trip of the first ping over the first relayed link.
    pub fn first_relay_rtt(&self) -> Option<Duration> {
        self.relay_probe.and_then(|r| self.probes.get(&r)).and_then(|p| p.rtts.first().copied())
    }

    /// Mean of the ping batch sent over the first relayed link.
    pub fn relay_ping_mean(&self) -> Option<Duration> {
        self.relay_probe.and_then(|r| self.probes.get(&r)).and_then(ProbeResult::mean_rtt)
    }

    pub fn set_expected_peers(&mut self, expected: Option<usize>) {
        self.config.expected_peers = expected;
    }

    pub fn is_connected(&self) -> bool {
        self.phase == Phase::Connected
    }

    fn mark(&mut self, now: SimTime, phase: Phase) {
        for p in [Phase::Reflected, Phase::Rendezvoused, Phase::Relaying, Phase::Connected] {
            if p > phase {
                break;
            }
            if let Some(slot) = self.times.slot(p) {
                slot.get_or_insert(now);
            }
        }
        if phase > self.phase {
            self.phase = phase;
            self.log.push((now, phase));
        }
    }

    pub fn start(&mut self, now: SimTime, private: &mut OverlayNode) {
        if self.started_at.is_some() {
            return;
        }
        self.started_at = Some(now);
        self.log.push((now, Phase::Starting));
        self.provider.start(now);
        self.after(now, private);
    }

    /// A public endpoint became known, or reflection gave up.
    pub fn on_reflected(&mut self, now: SimTime, private: &mut OverlayNode) {
        self.mark(now, Phase::Reflected);
        self.after(now, private);
    }

    pub fn handle_provider_input(&mut self, now: SimTime, private: &mut OverlayNode, input: ProviderInput) {
        self.provider.handle_input(now, input);
        self.after(now, private);
    }

    pub fn handle_timeout(&mut self, now: SimTime, private: &mut OverlayNode) {
        self.provider.handle_timeout(now);
        let timeout = self.config.ping_timeout;
        let expired: Vec<u64> =
            self.outstanding.iter().filter(|(_, o)| now.saturating_since(o.sent) >= timeout).map(|(n, _)| *n).collect();
        for nonce in expired {
            let o = self.outstanding.remove(&nonce).expect("expired ping");
            if let PingPurpose::Check(key) = o.purpose {
                if let Some(p) = self.peers.get_mut(&key) {
                    p.checking = false;
                }
            }
        }
        self.after(now, private);
    }

    pub fn poll_timeout(&self) -> Option<SimTime> {
        let pings = self.outstanding.values().map(|o| o.sent + self.config.ping_timeout);
        pings.chain(self.provider.poll_timeout()).min()
    }

    pub fn poll_command(&mut self) -> Option<ProviderCommand> {
        self.commands.pop_front()
    }

    pub fn handle_overlay_event(&mut self, now: SimTime, private: &mut OverlayNode, ev: &OverlayEvent) {
        match ev {
            OverlayEvent::LinkUp { remote, class: LinkClass::Relayed } => {
                self.mark(now, Phase::Relaying);
                if self.relay_probe.is_none() && self.config.relay_pings > 0 {
                    self.relay_probe = Some(*remote);
                    self.probe(now, private, *remote, self.config.relay_pings);
                }
            }
            OverlayEvent::Delivered(p) if p.proto == PayloadProtocol::App => {
                let mut r = Reader::new(&p.payload);
                match (r.u8(), r.u64()) {
                    (Ok(PING), Ok(nonce)) => {
                        let pong = Writer::with_tag(PONG).u64(nonce).finish();
                        private.route(now, p.src, DeliveryMode::Exact, PayloadProtocol::App, pong);
                    }
                    (Ok(PONG), Ok(nonce)) => self.on_pong(now, private, p.src, nonce),
                    _ => {}
                }
            }
            _ => {}
        }
        self.after(now, private);
    }

    fn on_pong(&mut self, now: SimTime, private: &OverlayNode, from: NodeId, nonce: u64) {
        let Some(o) = self.outstanding.remove(&nonce) else { return };
        let rtt = now.saturating_since(o.sent);
        match o.purpose {
            PingPurpose::Check(key) => {
                if let Some(p) = self.peers.get_mut(&key) {
                    p.checking = false;
                    let current = private.link(&from).map(|l| l.path.clone());
                    if current.is_some() && current == o.path {
                        p.verified = current;
                    }
                }
            }
            PingPurpose::Probe(remote) => {
                let r = self.probes.entry(remote).or_default();
                r.received += 1;
                r.rtts.push(rtt);
            }
        }
    }

    fn send_ping(&mut self, now: SimTime, private: &mut OverlayNode, remote: NodeId, purpose: PingPurpose) {
        let nonce: u64 = self.rng.random();
        let path = private.link(&remote).map(|l| l.path.clone());
        self.outstanding.insert(nonce, Outstanding { purpose, sent: now, path });
        let ping = Writer::with_tag(PING).u64(nonce).finish();
        private.route(now, remote, DeliveryMode::Exact, PayloadProtocol::App, ping);
    }

    /// Sends `count` pings to `remote` back to back; results accumulate in [`probes`](Self::probes).
    pub fn probe(&mut self, now: SimTime, private: &mut OverlayNode, remote: NodeId, count: u32) {
        let class = private.link(&remote).map(|l| l.class());
        let r = self.probes.entry(remote).or_default();
        r.sent += count;
        r.class = class;
        for _ in 0..count {
            self.send_ping(now, private, remote, PingPurpose::Probe(remote));
        }
    }

    fn own_relays(private: &OverlayNode) -> &[TransportAddress] {
        private.relay_addresses()
    }

    fn peer_key(list: &[TransportAddress]) -> Option<TransportAddress> {
        list.iter().find(|a| a.scheme.is_relay()).cloned()
    }

    fn learn(&mut self, private: &OverlayNode, list: Vec<TransportAddress>) -> Option<TransportAddress> {
        let key = Self::peer_key(&list)?;
        if Self::own_relays(private).contains(&key) {
            return None;
        }
        let entry = self.peers.entry(key.clone()).or_default();
        if list.len() >= entry.addresses.len() || !entry.addresses.iter().all(|a| list.contains(a)) {
            entry.addresses = list;
        }
        Some(key)
    }

    fn drain_provider(&mut self, now: SimTime, private: &mut OverlayNode) {
        while let Some(ev) = self.provider.poll_event() {
            match ev {
                ProviderEvent::Snapshot(lists) => {
                    let keys: Vec<TransportAddress> = lists.into_iter().filter_map(|l| self.learn(private, l)).collect();
                    self.peers.retain(|k, _| keys.contains(k));
                }
                ProviderEvent::Discovered(lists) => {
                    for l in lists {
                        self.learn(private, l);
                    }
                }
                ProviderEvent::AddressReply(list) => {
                    if self.learn(private, list).is_some() {
                        self.mark(now, Phase::Relaying);
                    }
                }
                ProviderEvent::Departed(addr) => {
                    self.peers.remove(&addr);
                }
                ProviderEvent::RelayAddress(addr) => private.add_relay_address(addr),
            }
        }
        if !self.peers.is_empty() {
            self.mark(now, Phase::Rendezvoused);
        }
    }

    /// Re-evaluates everything after an input: provider events, links, pings, phases.
    fn after(&mut self, now: SimTime, private: &mut OverlayNode) {
        self.drain_provider(now, private);
        if self.times.reflected.is_some() {
            let addresses = private.addresses();
            if addresses != self.announced {
                self.announced = addresses.clone();
                self.provider.announce(now, addresses);
            }
        }
        let keys: Vec<TransportAddress> = self.peers.keys().cloned().collect();
        let mut all_verified = !keys.is_empty();
        for key in keys {
            let link = match private.link_for_address(&key) {
                Some(l) => Some(l.clone()),
                None => self.peers[&key].remote.and_then(|r| private.link(&r).cloned()),
            };
            let Some(link) = link else {
                all_verified = false;
                let addresses = self.peers[&key].addresses.clone();
                private.connect(now, None, &addresses);
                continue;
            };
            let settled = link.class() == LinkClass::Direct || (link.permanent && !private.has_active_attempt(link.remote));
            let state = self.peers.get_mut(&key).expect("known peer");
            state.remote = Some(link.remote);
            let verified = state.verified.as_ref() == Some(&link.path);
            if settled && !verified && !state.checking {
                state.checking = true;
                self.send_ping(now, private, link.remote, PingPurpose::Check(key.clone()));
            }
            all_verified &= settled && verified;
        }
        let enough = self.config.expected_peers.is_none_or(|n| self.peers.len() >= n);
        let connected = all_verified && enough;
        if connected && self.phase != Phase::Connected {
            self.mark(now, Phase::Connected);
            self.provider.set_connected(now, true);
        } else if !connected && self.phase == Phase::Connected {
            self.phase = Phase::Relaying;
            self.log.push((now, Phase::Relaying));
            self.provider.set_connected(now, false);
        }
        while let Some(c) = self.provider.poll_command() {
            self.commands.push_back(c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marking_a_late_phase_fills_earlier_ones() {
        let ns = Namespace::new("svc", "1").unwrap();
        let provider = crate::rendezvous::DhtProvider::new(ns.key(), Default::default());
        let mut s = BootstrapSession::new(ns, Box::new(provider), SessionConfig::default(), 1);
        s.mark(SimTime::from_secs(2), Phase::Reflected);
        s.mark(SimTime::from_secs(5), Phase::Relaying);
        s.mark(SimTime::from_secs(9), Phase::Rendezvoused);
        let t = s.times();
        assert_eq!(t.reflected, Some(SimTime::from_secs(2)));
        assert_eq!(t.rendezvoused, Some(SimTime::from_secs(5)));
        assert_eq!(t.relaying, Some(SimTime::from_secs(5)));
        assert!(t.is_ordered());
        assert_eq!(s.phase(), Phase::Relaying);
    }

    #[test]
    fn ordering_check_rejects_gaps_and_inversions() {
        let mut t = PhaseTimes { reflected: Some(SimTime::from_secs(3)), rendezvoused: Some(SimTime::from_secs(1)), ..Default::default() };
        assert!(!t.is_ordered());
        t.rendezvoused = None;
        t.relaying = Some(SimTime::from_secs(4));
        assert!(!t.is_ordered());
    }
}
