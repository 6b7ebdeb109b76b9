use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::identifiers::{NodeId, Scheme, TransportAddress};
use crate::simnet::{Endpoint, SimTime};

use super::punch::{AttemptKind, PunchAttempt, PunchState};
use super::table::{closeness, greedy_next_hop, k_nearest, Link, LinkClass, LinkPath, LinkTable, NextHop};
use super::wire::{
    ConnectToMe, CtmKind, DeliveryMode, Message, PayloadProtocol, RoutedPacket, DEFAULT_TTL, NEIGHBOR_FORWARDABLE,
};

#[derive(Clone, Debug)]
pub struct OverlayConfig {
    /// Near links kept on each side of the ring.
    pub k: usize,
    pub handshake_timeout: Duration,
    pub handshake_retries: u32,
    pub probe_interval: Duration,
    pub punch_deadline: Duration,
    pub ping_period: Duration,
    pub ping_misses: u32,
    pub stabilize_period: Duration,
    /// Stabilize ticks an unwanted link survives before it is closed.
    pub prune_ticks: u32,
    pub ttl: u8,
    /// Send ConnectToMe over relayed links to try for a direct path.
    pub upgrade_links: bool,
    /// Minimum gap between ConnectToMe messages for the same remote.
    pub ctm_retry: Duration,
    /// How long an id learnt from a neighbor list is remembered without a refresh.
    pub known_ttl: Duration,
    /// Emit a [`OverlayEvent::Forwarded`] for every forwarding decision.
    pub trace_forwarding: bool,
    /// Period of the self-lookup through the entry node. Rings that formed
    /// apart merge through it, since every ring holds a link into another.
    pub rejoin_period: Duration,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        OverlayConfig {
            k: 2,
            handshake_timeout: Duration::from_secs(5),
            handshake_retries: 3,
            probe_interval: Duration::from_millis(500),
            punch_deadline: Duration::from_secs(10),
            ping_period: Duration::from_secs(15),
            ping_misses: 3,
            stabilize_period: Duration::from_secs(5),
            prune_ticks: 2,
            ttl: DEFAULT_TTL,
            upgrade_links: true,
            ctm_retry: Duration::from_secs(10),
            known_ttl: Duration::from_secs(15),
            trace_forwarding: false,
            rejoin_period: Duration::from_secs(15),
        }
    }
}

impl OverlayConfig {
    fn handshake_window(&self) -> Duration {
        self.handshake_timeout * (self.handshake_retries + 1)
    }
}

/// A frame for the host to put on the wire. Tunnel paths never appear here.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transmit {
    pub path: LinkPath,
    /// The remote's id, or zero while it is still unknown.
    pub remote: NodeId,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OverlayEvent {
    LinkUp { remote: NodeId, class: LinkClass },
    LinkUpgraded { remote: NodeId, class: LinkClass },
    LinkDown { remote: NodeId },
    AttemptFinished { remote: Option<NodeId>, kind: AttemptKind, succeeded: bool },
    /// A remote reported a new public endpoint for us.
    Reflected(Endpoint),
    /// The reply to our join request arrived.
    Joined,
    Delivered(RoutedPacket),
    Forwarded { dst: NodeId, at: NodeId, next: NodeId, hops: u8, mode: DeliveryMode },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OverlayStats {
    pub delivered: u64,
    pub forwarded: u64,
    pub exact_misses: u64,
    pub ttl_drops: u64,
    pub dead_ends: u64,
    pub decode_errors: u64,
    pub hellos_sent: u64,
    pub tunnels_unavailable: u64,
    pub links_dropped: u64,
}

#[derive(Clone, Debug)]
struct Known {
    heard_at: SimTime,
    /// A node that reported a link to this id.
    via: Option<NodeId>,
}

#[derive(Clone, Debug, Default)]
struct RemoteInfo {
    addresses: Vec<TransportAddress>,
    neighbors: Vec<(NodeId, u8)>,
}

/// A ring overlay node as a sans-IO state machine.
///
/// The host feeds it frames ([`handle_datagram`](Self::handle_datagram),
/// [`handle_relay`](Self::handle_relay)) and timeouts, then drains
/// [`poll_transmit`](Self::poll_transmit) and [`poll_event`](Self::poll_event).
pub struct OverlayNode {
    id: NodeId,
    config: OverlayConfig,
    path_suffix: Option<String>,
    local: Option<Endpoint>,
    relays: Vec<TransportAddress>,
    reflected: Vec<Endpoint>,
    table: LinkTable,
    attempts: Vec<PunchAttempt>,
    pending_confirm: BTreeMap<(NodeId, u64), (LinkPath, SimTime)>,
    known: BTreeMap<NodeId, Known>,
    ctm_sent: BTreeMap<NodeId, SimTime>,
    remote_info: BTreeMap<NodeId, RemoteInfo>,
    tunnel_use: BTreeMap<(NodeId, NodeId), SimTime>,
    seeds: Vec<Endpoint>,
    /// The seed link this node joined through; kept open for rejoins.
    entry: Option<NodeId>,
    joined: bool,
    /// Answered our join lookup, and when. Joining completes once linked to
    /// it and to the nearest known id on each side.
    join_responder: Option<(NodeId, SimTime)>,
    started: bool,
    left: bool,
    next_stabilize: SimTime,
    next_ping: SimTime,
    next_rejoin: SimTime,
    neighbors_dirty: bool,
    rng: ChaCha8Rng,
    now: SimTime,
    out: VecDeque<Transmit>,
    events: VecDeque<OverlayEvent>,
    stats: OverlayStats,
}

const MAX_REFLECTED: usize = 4;

impl OverlayNode {
    pub fn new(id: NodeId, config: OverlayConfig, seed: u64) -> Self {
        let k = config.k;
        OverlayNode {
            id,
            config,
            path_suffix: None,
            local: None,
            relays: Vec::new(),
            reflected: Vec::new(),
            table: LinkTable::new(k),
            attempts: Vec::new(),
            pending_confirm: BTreeMap::new(),
            known: BTreeMap::new(),
            ctm_sent: BTreeMap::new(),
            remote_info: BTreeMap::new(),
            tunnel_use: BTreeMap::new(),
            seeds: Vec::new(),
            entry: None,
            joined: false,
            join_responder: None,
            started: false,
            left: false,
            next_stabilize: SimTime::MAX,
            next_ping: SimTime::MAX,
            next_rejoin: SimTime::MAX,
            neighbors_dirty: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
            now: SimTime::ZERO,
            out: VecDeque::new(),
            events: VecDeque::new(),
            stats: OverlayStats::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn config(&self) -> &OverlayConfig {
        &self.config
    }

    pub fn set_k(&mut self, k: usize) {
        self.config.k = k;
        self.table.set_k(k);
    }

    /// Path suffix (without the leading `/`) on advertised udp addresses.
    pub fn set_path(&mut self, path: Option<String>) {
        self.path_suffix = path;
    }

    pub fn path(&self) -> Option<&str> {
        self.path_suffix.as_deref()
    }

    pub fn set_local_endpoint(&mut self, ep: Endpoint) {
        self.local = Some(ep);
    }

    pub fn add_relay_address(&mut self, addr: TransportAddress) {
        if !self.relays.contains(&addr) {
            self.relays.push(addr);
        }
    }

    pub fn relay_addresses(&self) -> &[TransportAddress] {
        &self.relays
    }

    /// Records a public endpoint learnt elsewhere (a sibling overlay on the
    /// same socket, or a reflection server).
    pub fn add_reflected(&mut self, ep: Endpoint) {
        if self.reflected.first() == Some(&ep) {
            return;
        }
        let fresh = !self.reflected.contains(&ep);
        self.reflected.retain(|e| *e != ep);
        self.reflected.insert(0, ep);
        self.reflected.truncate(MAX_REFLECTED);
        if fresh {
            self.events.push_back(OverlayEvent::Reflected(ep));
        }
    }

    pub fn reflected(&self) -> &[Endpoint] {
        &self.reflected
    }

    pub fn links(&self) -> &LinkTable {
        &self.table
    }

    pub fn link(&self, remote: &NodeId) -> Option<&Link> {
        self.table.get(remote)
    }

    /// `(near_right, near_left)`.
    pub fn near(&self) -> (Vec<NodeId>, Vec<NodeId>) {
        self.table.near(self.id)
    }

    pub fn attempts(&self) -> &[PunchAttempt] {
        &self.attempts
    }

    pub fn has_active_attempt(&self, remote: NodeId) -> bool {
        self.attempts.iter().any(|a| a.is_active() && a.target == Some(remote))
    }

    pub fn is_joined(&self) -> bool {
        self.joined
    }

    pub fn has_left(&self) -> bool {
        self.left
    }

    pub fn stats(&self) -> OverlayStats {
        self.stats
    }

    /// Own address list: reflected endpoints first, then the local endpoint, then relays.
    pub fn addresses(&self) -> Vec<TransportAddress> {
        let path = self.path_suffix.as_deref();
        let mut out: Vec<TransportAddress> =
            self.reflected.iter().map(|ep| TransportAddress::udp(ep.ip, ep.port, path)).collect();
        if let Some(l) = self.local {
            if !self.reflected.contains(&l) {
                out.push(TransportAddress::udp(l.ip, l.port, path));
            }
        }
        out.extend(self.relays.iter().cloned());
        out
    }

    fn is_own_endpoint(&self, ep: Endpoint) -> bool {
        self.local == Some(ep) || self.reflected.contains(&ep)
    }

    fn direct_candidates(&self, addresses: &[TransportAddress]) -> Vec<LinkPath> {
        let mut out = Vec::new();
        for a in addresses {
            if !matches!(a.scheme, Scheme::Udp) || a.path.as_deref() != self.path_suffix.as_deref() {
                continue;
            }
            if let Some((ip, port)) = a.ip_port() {
                let ep = Endpoint::new(ip, port);
                let path = LinkPath::Direct(ep);
                if !self.is_own_endpoint(ep) && !out.contains(&path) {
                    out.push(path);
                }
            }
        }
        out
    }

    fn relay_candidates(&self, addresses: &[TransportAddress]) -> Vec<LinkPath> {
        let mut out = Vec::new();
        for a in addresses {
            if a.scheme.is_relay() && !self.relays.contains(a) {
                let path = LinkPath::Relay(a.clone());
                if !out.contains(&path) {
                    out.push(path);
                }
            }
        }
        out
    }

    /// Link whose relay path or advertised addresses include `addr`.
    pub fn link_for_address(&self, addr: &TransportAddress) -> Option<&Link> {
        self.table
            .iter()
            .find(|l| l.path == LinkPath::Relay(addr.clone()) || l.remote_addresses.contains(addr))
    }

    pub fn start(&mut self, now: SimTime) {
        if self.started {
            return;
        }
        self.started = true;
        self.now = now;
        self.next_stabilize = now + self.config.stabilize_period;
        self.next_ping = now + self.config.ping_period;
        self.next_rejoin = now + self.config.rejoin_period;
    }

    /// Contacts the seeds; the first to answer becomes the entry point.
    /// With no seeds the node forms a ring of one and counts as joined.
    pub fn join(&mut self, now: SimTime, seeds: Vec<Endpoint>) {
        self.start(now);
        self.now = now;
        self.seeds = seeds;
        if self.seeds.is_empty() && !self.joined {
            self.joined = true;
            self.events.push_back(OverlayEvent::Joined);
        }
        self.start_seed_attempt(now);
        self.flush(now);
    }

    fn start_seed_attempt(&mut self, now: SimTime) {
        let candidates: Vec<LinkPath> =
            self.seeds.iter().filter(|s| !self.is_own_endpoint(**s)).map(|s| LinkPath::Direct(*s)).collect();
        if candidates.is_empty() || self.attempts.iter().any(|a| a.is_active() && a.kind == AttemptKind::Seed) {
            return;
        }
        let nonce = self.rng.random();
        let window = self.config.handshake_window();
        let attempt =
            PunchAttempt::new(nonce, AttemptKind::Seed, None, candidates, now, self.config.handshake_timeout, window);
        self.attempts.push(attempt);
        self.drive_attempts(now);
    }

    /// Starts linking to a peer known only by its addresses. Relay candidates
    /// take precedence; direct paths follow later through ConnectToMe.
    pub fn connect(&mut self, now: SimTime, target: Option<NodeId>, addresses: &[TransportAddress]) {
        self.start(now);
        self.now = now;
        if target == Some(self.id) || target.is_some_and(|t| self.table.contains(&t)) {
            return;
        }
        if addresses.iter().any(|a| self.link_for_address(a).is_some()) {
            return;
        }
        let relays = self.relay_candidates(addresses);
        let (kind, candidates, interval, window) = if !relays.is_empty() {
            (AttemptKind::Relay, relays, self.config.handshake_timeout, self.config.handshake_window())
        } else {
            let direct = self.direct_candidates(addresses);
            if direct.is_empty() {
                return;
            }
            (AttemptKind::Punch, direct, self.config.probe_interval, self.config.punch_deadline)
        };
        let overlapping = self.attempts.iter().any(|a| {
            a.is_active() && (target.is_some() && a.target == target || a.candidates.iter().any(|c| candidates.contains(c)))
        });
        if overlapping {
            return;
        }
        let nonce = self.rng.random();
        self.attempts.push(PunchAttempt::new(nonce, kind, target, candidates, now, interval, window));
        self.drive_attempts(now);
        self.flush(now);
    }

    /// Originates a routed packet.
    pub fn route(&mut self, now: SimTime, dst: NodeId, mode: DeliveryMode, proto: PayloadProtocol, payload: Vec<u8>) {
        self.route_via(now, dst, None, mode, proto, payload);
    }

    pub fn route_via(
        &mut self,
        now: SimTime,
        dst: NodeId,
        via: Option<NodeId>,
        mode: DeliveryMode,
        proto: PayloadProtocol,
        payload: Vec<u8>,
    ) {
        self.now = now;
        let mut p = RoutedPacket::new(self.id, dst, mode, proto, payload).with_via(via);
        p.ttl = self.config.ttl;
        self.forward(now, p);
        self.flush(now);
    }

    /// A directly linked node that can forward replies to us: the first hop toward `dst`.
    pub fn reply_via_hint(&self, dst: NodeId) -> Option<NodeId> {
        match greedy_next_hop(self.id, self.table.ids(), dst, false) {
            Some(NextHop::Link(n)) => Some(n),
            _ => None,
        }
    }

    /// Closes every link and stops all timers.
    pub fn leave(&mut self, now: SimTime) {
        self.now = now;
        let ids: Vec<NodeId> = self.table.ids().collect();
        for id in ids {
            self.send_on_link(now, id, Message::Close { src: self.id, dst: id });
        }
        for id in self.table.ids().collect::<Vec<_>>() {
            self.table.remove(&id);
            self.events.push_back(OverlayEvent::LinkDown { remote: id });
        }
        self.attempts.clear();
        self.left = true;
        self.started = false;
        self.next_stabilize = SimTime::MAX;
        self.next_ping = SimTime::MAX;
    }

    pub fn poll_transmit(&mut self) -> Option<Transmit> {
        self.out.pop_front()
    }

    pub fn poll_event(&mut self) -> Option<OverlayEvent> {
        self.events.pop_front()
    }

    pub fn poll_timeout(&self) -> Option<SimTime> {
        if self.left {
            return None;
        }
        let attempts = self.attempts.iter().filter_map(|a| a.next_deadline());
        attempts.chain([self.next_stabilize, self.next_ping]).filter(|t| *t != SimTime::MAX).min()
    }

    pub fn handle_timeout(&mut self, now: SimTime) {
        if self.left {
            return;
        }
        self.now = now;
        if now >= self.next_stabilize {
            self.stabilize(now);
            while self.next_stabilize <= now {
                self.next_stabilize += self.config.stabilize_period;
            }
        }
        if now >= self.next_ping {
            self.ping_tick(now);
            self.next_ping = now + self.config.ping_period;
        }
        self.drive_attempts(now);
        self.flush(now);
    }

    /// A frame that arrived on the socket from `from`, path prefix already stripped.
    pub fn handle_datagram(&mut self, now: SimTime, from: Endpoint, bytes: &[u8]) {
        self.handle_frame(now, LinkPath::Direct(from), Some(from), bytes);
    }

    /// A frame that arrived over a relay transport from `from`.
    pub fn handle_relay(&mut self, now: SimTime, from: TransportAddress, bytes: &[u8]) {
        self.handle_frame(now, LinkPath::Relay(from), None, bytes);
    }

    fn handle_frame(&mut self, now: SimTime, path: LinkPath, observed: Option<Endpoint>, bytes: &[u8]) {
        if self.left {
            return;
        }
        self.now = now;
        match Message::decode(bytes) {
            Ok(msg) => self.handle_message(now, path, observed, msg),
            Err(_) => self.stats.decode_errors += 1,
        }
        self.flush(now);
    }

    fn handle_message(&mut self, now: SimTime, path: LinkPath, observed: Option<Endpoint>, msg: Message) {
        let src = msg.src();
        if src == self.id {
            return;
        }
        match msg {
            Message::Routed(p) => self.forward(now, p),
            Message::Hello { dst, nonce, .. } => {
                if dst.is_zero() || dst == self.id {
                    self.on_hello(now, src, nonce, path, observed);
                }
            }
            Message::HelloAck { dst, nonce, observed: seen, .. } if dst == self.id => {
                self.on_hello_ack(now, src, nonce, path, observed, seen)
            }
            Message::Confirm { dst, nonce, observed: seen, .. } if dst == self.id => {
                self.touch(now, src);
                if let Some((p, _)) = self.pending_confirm.remove(&(src, nonce)) {
                    self.establish(now, src, p.clone(), seen, observed);
                    for a in self.attempts.iter_mut() {
                        if a.is_active() && (a.target == Some(src) || a.candidates.contains(&p)) && a.candidates.iter().any(|c| c.class() == p.class()) {
                            a.succeed();
                            a.target = Some(src);
                            self.events.push_back(OverlayEvent::AttemptFinished {
                                remote: Some(src),
                                kind: a.kind,
                                succeeded: true,
                            });
                        }
                    }
                }
            }
            Message::Ping { dst, nonce, .. } if dst == self.id => {
                if !self.table.contains(&src) {
                    // a Confirm overtaken by the remote's first ping
                    let pending = self.pending_confirm.iter().find(|((r, _), (p, _))| *r == src && *p == path).map(|(k, _)| *k);
                    if let Some(key) = pending {
                        let (p, _) = self.pending_confirm.remove(&key).expect("present");
                        self.establish(now, src, p, None, observed);
                    }
                }
                self.touch(now, src);
                let reply = Message::Pong { src: self.id, dst: src, nonce };
                if self.table.contains(&src) {
                    self.send_on_link(now, src, reply);
                } else {
                    self.send_on_path(now, &path, src, Message::Close { src: self.id, dst: src });
                }
            }
            Message::Pong { dst, .. } if dst == self.id => {
                self.touch(now, src);
                if let Some(link) = self.table.get_mut(&src) {
                    link.missed_pings = 0;
                    link.ping = None;
                }
            }
            Message::Close { dst, .. } if dst == self.id => {
                if self.table.contains(&src) {
                    self.drop_link(src);
                }
            }
            Message::Neighbors { wants_you, near, .. } => {
                self.touch(now, src);
                if let Some(link) = self.table.get_mut(&src) {
                    link.remote_wants = wants_you;
                    link.remote_near = near.clone();
                    for (id, _) in &near {
                        if *id != self.id && !self.table.contains(id) {
                            self.known.insert(*id, Known { heard_at: now, via: Some(src) });
                        }
                    }
                    self.connect_desired(now);
                }
            }
            _ => {}
        }
    }

    /// Only a Pong clears missed pings: inbound traffic alone says nothing
    /// about the outbound path, which may run through a different forwarder.
    fn touch(&mut self, now: SimTime, remote: NodeId) {
        if let Some(link) = self.table.get_mut(&remote) {
            link.last_heard = now;
        }
    }

    fn attempt_to(&self, remote: NodeId, path: &LinkPath) -> Option<usize> {
        self.attempts.iter().position(|a| {
            a.is_active()
                && (a.target == Some(remote) || a.candidates.contains(path))
                && a.candidates.iter().any(|c| c.class() == path.class())
        })
    }

    fn on_hello(&mut self, now: SimTime, src: NodeId, nonce: u64, path: LinkPath, observed: Option<Endpoint>) {
        self.touch(now, src);
        if let Some(i) = self.attempt_to(src, &path) {
            let attempt = &mut self.attempts[i];
            if attempt.target.is_none() && attempt.candidates.contains(&path) {
                attempt.target = Some(src);
            }
            // peer-reflexive candidate: where the remote's probe came from
            let fresh = attempt.add_candidate(path.clone());
            if fresh {
                let nonce = attempt.nonce;
                self.send_hello(now, &path, src, nonce);
            }
            // simultaneous initiation: the lower id's handshake goes ahead
            if self.id < src {
                return;
            }
        }
        self.pending_confirm.insert((src, nonce), (path.clone(), now));
        let ack = Message::HelloAck { src: self.id, dst: src, nonce, observed };
        self.send_on_path(now, &path, src, ack);
    }

    fn on_hello_ack(
        &mut self,
        now: SimTime,
        src: NodeId,
        nonce: u64,
        path: LinkPath,
        observed: Option<Endpoint>,
        seen: Option<Endpoint>,
    ) {
        let Some(i) = self.attempts.iter().position(|a| a.is_active() && a.nonce == nonce) else {
            return;
        };
        if self.attempts[i].target.is_some_and(|t| t != src) {
            return;
        }
        let attempt = &mut self.attempts[i];
        attempt.target = Some(src);
        attempt.succeed();
        let kind = attempt.kind;
        self.establish(now, src, path.clone(), seen, observed);
        self.send_on_path(now, &path, src, Message::Confirm { src: self.id, dst: src, nonce, observed });
        self.events.push_back(OverlayEvent::AttemptFinished { remote: Some(src), kind, succeeded: true });
        if kind == AttemptKind::Seed {
            self.entry = Some(src);
            if !self.joined {
                self.send_join(now, src);
            }
        }
    }

    fn send_join(&mut self, now: SimTime, entry: NodeId) {
        self.send_self_lookup(now, entry, true);
    }

    /// Looks up our own id starting at `entry`; whoever is closest there replies.
    fn send_self_lookup(&mut self, now: SimTime, entry: NodeId, join: bool) {
        let ctm = ConnectToMe {
            kind: CtmKind::Request,
            join,
            sender: self.id,
            reply_via: Some(entry),
            addresses: self.addresses(),
            neighbors: if join { Vec::new() } else { self.near_list() },
        };
        let mut p = RoutedPacket::new(self.id, self.id, DeliveryMode::Closest, PayloadProtocol::ConnectToMe, ctm.encode())
            .with_via((!join).then_some(entry));
        p.exclude_source = true;
        p.ttl = self.config.ttl;
        self.forward(now, p);
    }

    fn establish(
        &mut self,
        now: SimTime,
        remote: NodeId,
        path: LinkPath,
        observed_self: Option<Endpoint>,
        observed_remote: Option<Endpoint>,
    ) {
        self.establish_link(now, remote, path, observed_self, observed_remote);
        self.check_joined();
    }

    fn check_joined(&mut self) {
        let Some((responder, _)) = self.join_responder.filter(|_| !self.joined) else { return };
        let ids = self.table.ids().chain(self.known.keys().copied());
        let (r, l) = k_nearest(self.id, ids, 1);
        if self.table.contains(&responder) && r.iter().chain(&l).all(|id| self.table.contains(id)) {
            self.mark_joined();
        }
    }

    fn mark_joined(&mut self) {
        self.joined = true;
        self.events.push_back(OverlayEvent::Joined);
    }

    fn establish_link(
        &mut self,
        now: SimTime,
        remote: NodeId,
        path: LinkPath,
        observed_self: Option<Endpoint>,
        observed_remote: Option<Endpoint>,
    ) {
        let class = path.class();
        let tunneled = class == LinkClass::Tunneled;
        match self.table.get_mut(&remote) {
            None => {
                let mut link = Link::new(remote, path, now);
                link.observed_self = observed_self;
                link.observed_remote = observed_remote;
                link.permanent = tunneled;
                if let Some(info) = self.remote_info.get(&remote) {
                    link.remote_addresses = info.addresses.clone();
                }
                self.table.insert(link);
                self.known.remove(&remote);
                self.events.push_back(OverlayEvent::LinkUp { remote, class });
                self.neighbors_dirty = true;
            }
            Some(link) => {
                link.last_heard = now;
                link.missed_pings = 0;
                let upgraded = class < link.class();
                // a completed handshake proves its path; the old one may be dead
                if upgraded || (class == link.class() && path != link.path) {
                    link.path = path;
                    link.observed_remote = observed_remote.or(link.observed_remote);
                    link.observed_self = observed_self.or(link.observed_self);
                    link.permanent = tunneled;
                }
                if upgraded {
                    self.events.push_back(OverlayEvent::LinkUpgraded { remote, class });
                    self.neighbors_dirty = true;
                }
            }
        }
        if let Some(ep) = observed_self {
            self.add_reflected(ep);
        }
    }

    fn drop_link(&mut self, remote: NodeId) {
        if self.table.remove(&remote).is_none() {
            return;
        }
        if self.entry == Some(remote) {
            self.entry = None;
        }
        self.stats.links_dropped += 1;
        self.events.push_back(OverlayEvent::LinkDown { remote });
        self.neighbors_dirty = true;
        // re-home tunnels that went through the departed node
        let dependent: Vec<NodeId> =
            self.table.iter().filter(|l| l.path == LinkPath::Tunnel(remote)).map(|l| l.remote).collect();
        for id in dependent {
            match self.tunnel_forwarder(id, Some(remote)) {
                Some(v) => {
                    if let Some(l) = self.table.get_mut(&id) {
                        l.path = LinkPath::Tunnel(v);
                    }
                }
                None => self.drop_link(id),
            }
        }
    }

    /// A non-tunnel neighbor that the remote reports as forwardable.
    fn tunnel_forwarder(&self, remote: NodeId, exclude: Option<NodeId>) -> Option<NodeId> {
        let mut reported: BTreeSet<NodeId> = BTreeSet::new();
        if let Some(l) = self.table.get(&remote) {
            reported.extend(l.remote_near.iter().filter(|(_, f)| f & NEIGHBOR_FORWARDABLE != 0).map(|(id, _)| *id));
        }
        if let Some(info) = self.remote_info.get(&remote) {
            reported.extend(info.neighbors.iter().filter(|(_, f)| f & NEIGHBOR_FORWARDABLE != 0).map(|(id, _)| *id));
        }
        reported
            .into_iter()
            .filter(|v| Some(*v) != exclude && *v != remote && *v != self.id)
            .filter(|v| self.table.get(v).is_some_and(|l| l.class() != LinkClass::Tunneled))
            .min_by_key(|v| closeness(*v, remote))
    }

    fn try_tunnel(&mut self, now: SimTime, remote: NodeId) {
        if self.table.contains(&remote) || self.has_active_attempt(remote) {
            return;
        }
        let mut candidates = Vec::new();
        let mut exclude = None;
        while let Some(v) = self.tunnel_forwarder(remote, exclude) {
            candidates.push(LinkPath::Tunnel(v));
            exclude = Some(v);
            if candidates.len() >= 2 {
                break;
            }
        }
        if candidates.is_empty() {
            self.stats.tunnels_unavailable += 1;
            return;
        }
        let nonce = self.rng.random();
        let window = self.config.handshake_window();
        let attempt = PunchAttempt::new(
            nonce,
            AttemptKind::Tunnel,
            Some(remote),
            candidates,
            now,
            self.config.handshake_timeout,
            window,
        );
        self.attempts.push(attempt);
        self.drive_attempts(now);
    }

    fn start_punch(&mut self, now: SimTime, remote: NodeId, addresses: &[TransportAddress]) {
        if remote == self.id {
            return;
        }
        if self.table.get(&remote).is_some_and(|l| l.class() == LinkClass::Direct || l.permanent) {
            return;
        }
        if self.attempts.iter().any(|a| a.is_active() && a.target == Some(remote) && a.kind == AttemptKind::Punch) {
            return;
        }
        let candidates = self.direct_candidates(addresses);
        if candidates.is_empty() {
            match self.table.get_mut(&remote) {
                Some(l) => l.permanent = true,
                None => self.try_tunnel(now, remote),
            }
            return;
        }
        let nonce = self.rng.random();
        let attempt = PunchAttempt::new(
            nonce,
            AttemptKind::Punch,
            Some(remote),
            candidates,
            now,
            self.config.probe_interval,
            self.config.punch_deadline,
        );
        self.attempts.push(attempt);
        self.drive_attempts(now);
    }

    fn drive_attempts(&mut self, now: SimTime) {
        let mut failed = Vec::new();
        let mut sends = Vec::new();
        for a in self.attempts.iter_mut() {
            let was_active = a.is_active();
            if let Some(paths) = a.poll(now) {
                for p in paths {
                    sends.push((p, a.target.unwrap_or(NodeId::ZERO), a.nonce));
                }
            }
            if was_active && a.state == PunchState::Failed {
                failed.push((a.kind, a.target));
            }
        }
        for (path, target, nonce) in sends {
            self.send_hello(now, &path, target, nonce);
        }
        self.attempts.retain(|a| a.is_active());
        for (kind, target) in failed {
            self.events.push_back(OverlayEvent::AttemptFinished { remote: target, kind, succeeded: false });
            let Some(remote) = target else { continue };
            match kind {
                AttemptKind::Punch => match self.table.get_mut(&remote) {
                    Some(l) => l.permanent = true,
                    None => self.try_tunnel(now, remote),
                },
                AttemptKind::Seed | AttemptKind::Relay | AttemptKind::Tunnel => {}
            }
        }
    }

    fn send_hello(&mut self, now: SimTime, path: &LinkPath, target: NodeId, nonce: u64) {
        self.stats.hellos_sent += 1;
        let hello = Message::Hello { src: self.id, dst: target, nonce };
        self.send_on_path(now, path, target, hello);
    }

    fn send_on_path(&mut self, now: SimTime, path: &LinkPath, remote: NodeId, msg: Message) {
        match path {
            LinkPath::Direct(_) | LinkPath::Relay(_) => {
                self.out.push_back(Transmit { path: path.clone(), remote, bytes: msg.encode() })
            }
            LinkPath::Tunnel(v) => {
                let mut p = RoutedPacket::new(self.id, remote, DeliveryMode::Exact, PayloadProtocol::TunnelControl, msg.encode())
                    .with_via(Some(*v));
                p.ttl = self.config.ttl;
                self.forward(now, p);
            }
        }
    }

    fn send_on_link(&mut self, now: SimTime, remote: NodeId, msg: Message) {
        if let Some(path) = self.table.get(&remote).map(|l| l.path.clone()) {
            self.send_on_path(now, &path, remote, msg);
        }
    }

    fn forward(&mut self, now: SimTime, mut p: RoutedPacket) {
        let eligible = !(p.exclude_source && p.src == self.id);
        if p.dst == self.id && eligible {
            self.deliver(now, p);
            return;
        }
        let tunnel_packet = p.proto == PayloadProtocol::TunnelControl;
        let excluded = |id: &NodeId, l: &Link| (p.exclude_source && *id == p.src) || (tunnel_packet && l.class() == LinkClass::Tunneled);
        let candidates: Vec<NodeId> = self.table.iter().filter(|l| !excluded(&l.remote, l)).map(|l| l.remote).collect();

        if let (Some(v), false) = (p.via, p.via_reached) {
            if v == self.id {
                p.via_reached = true;
                if tunnel_packet {
                    let key = if p.src < p.dst { (p.src, p.dst) } else { (p.dst, p.src) };
                    self.tunnel_use.insert(key, now);
                }
            } else if !tunnel_packet && p.mode == DeliveryMode::Exact && candidates.contains(&p.dst) {
                p.via_reached = true;
            } else {
                match greedy_next_hop(self.id, candidates.iter().copied(), v, true) {
                    Some(NextHop::Link(n)) => {
                        self.send_routed(now, n, p);
                        return;
                    }
                    _ => p.via_reached = true,
                }
            }
        }

        match greedy_next_hop(self.id, candidates.iter().copied(), p.dst, eligible) {
            Some(NextHop::Local) => {
                if p.mode == DeliveryMode::Closest {
                    self.deliver(now, p);
                } else {
                    self.stats.exact_misses += 1;
                }
            }
            Some(NextHop::Link(n)) => self.send_routed(now, n, p),
            None => self.stats.dead_ends += 1,
        }
    }

    fn send_routed(&mut self, now: SimTime, next: NodeId, mut p: RoutedPacket) {
        if p.hops >= p.ttl {
            self.stats.ttl_drops += 1;
            return;
        }
        p.hops += 1;
        if p.src != self.id {
            self.stats.forwarded += 1;
        }
        if self.config.trace_forwarding {
            self.events.push_back(OverlayEvent::Forwarded { dst: p.dst, at: self.id, next, hops: p.hops, mode: p.mode });
        }
        self.send_on_link(now, next, Message::Routed(p));
    }

    fn deliver(&mut self, now: SimTime, p: RoutedPacket) {
        self.stats.delivered += 1;
        match p.proto {
            PayloadProtocol::ConnectToMe => match ConnectToMe::decode(&p.payload) {
                Ok(ctm) => self.on_ctm(now, ctm),
                Err(_) => self.stats.decode_errors += 1,
            },
            PayloadProtocol::TunnelControl => {
                let Some(v) = p.via else { return };
                match Message::decode(&p.payload) {
                    // routed frames keep their originator; link messages must come from the tunnel peer
                    Ok(inner) if matches!(inner, Message::Routed(_)) || inner.src() == p.src => {
                        self.handle_message(now, LinkPath::Tunnel(v), None, inner)
                    }
                    _ => self.stats.decode_errors += 1,
                }
            }
            _ => self.events.push_back(OverlayEvent::Delivered(p)),
        }
    }

    fn near_list(&self) -> Vec<(NodeId, u8)> {
        let (r, l) = self.near();
        let mut ids: Vec<NodeId> = r.into_iter().chain(l).collect();
        ids.sort();
        ids.dedup();
        ids.into_iter()
            .map(|id| {
                let forwardable = self.table.get(&id).is_some_and(|l| l.class() != LinkClass::Tunneled);
                (id, if forwardable { NEIGHBOR_FORWARDABLE } else { 0 })
            })
            .collect()
    }

    fn on_ctm(&mut self, now: SimTime, ctm: ConnectToMe) {
        let sender = ctm.sender;
        if sender == self.id {
            return;
        }
        for (id, _) in &ctm.neighbors {
            if *id != self.id && !self.table.contains(id) {
                self.known.insert(*id, Known { heard_at: now, via: Some(sender) });
            }
        }
        let info = self.remote_info.entry(sender).or_default();
        let changed = info.addresses != ctm.addresses;
        info.addresses = ctm.addresses.clone();
        info.neighbors = ctm.neighbors.clone();
        if let Some(link) = self.table.get_mut(&sender) {
            link.remote_addresses = ctm.addresses.clone();
            if changed && link.class() == LinkClass::Relayed {
                link.permanent = false;
            }
        }
        match ctm.kind {
            CtmKind::Request => {
                let reply = ConnectToMe {
                    kind: CtmKind::Reply,
                    join: ctm.join,
                    sender: self.id,
                    reply_via: None,
                    addresses: self.addresses(),
                    neighbors: self.near_list(),
                };
                let mut p = RoutedPacket::new(self.id, sender, DeliveryMode::Exact, PayloadProtocol::ConnectToMe, reply.encode())
                    .with_via(ctm.reply_via.filter(|v| *v != self.id));
                p.ttl = self.config.ttl;
                self.forward(now, p);
                self.start_punch(now, sender, &ctm.addresses);
            }
            CtmKind::Reply => {
                if ctm.join && !self.joined {
                    self.join_responder = Some((sender, now));
                }
                self.start_punch(now, sender, &ctm.addresses);
                self.check_joined();
                self.connect_desired(now);
            }
        }
    }

    fn send_ctm(&mut self, now: SimTime, target: NodeId, via: Option<NodeId>) {
        let reply_via = self.reply_via_hint(via.unwrap_or(target));
        let ctm = ConnectToMe {
            kind: CtmKind::Request,
            join: false,
            sender: self.id,
            reply_via,
            addresses: self.addresses(),
            neighbors: self.near_list(),
        };
        self.ctm_sent.insert(target, now);
        let via = via.filter(|v| *v != self.id && *v != target);
        let mut p = RoutedPacket::new(self.id, target, DeliveryMode::Exact, PayloadProtocol::ConnectToMe, ctm.encode()).with_via(via);
        p.ttl = self.config.ttl;
        self.forward(now, p);
    }

    fn ctm_due(&self, now: SimTime, id: NodeId) -> bool {
        self.ctm_sent.get(&id).is_none_or(|t| now.saturating_since(*t) >= self.config.ctm_retry)
    }

    /// Sends ConnectToMe to ids that belong in the near set but are not linked.
    fn connect_desired(&mut self, now: SimTime) {
        let ids = self.table.ids().chain(self.known.keys().copied());
        let (r, l) = k_nearest(self.id, ids, self.config.k);
        let mut wanted: Vec<NodeId> = r.into_iter().chain(l).collect();
        wanted.sort();
        wanted.dedup();
        for id in wanted {
            if self.table.contains(&id) || self.has_active_attempt(id) || !self.ctm_due(now, id) {
                continue;
            }
            let via = self.known.get(&id).and_then(|k| k.via);
            self.send_ctm(now, id, via);
        }
    }

    fn send_neighbors(&mut self, now: SimTime) {
        let near = self.near_list();
        let mut wanted: BTreeSet<NodeId> = near.iter().map(|(id, _)| *id).collect();
        wanted.extend(self.entry);
        // both ends of a tunnel we forward, and every forwarder we tunnel through
        wanted.extend(self.tunnel_use.keys().flat_map(|(a, b)| [*a, *b]));
        wanted.extend(self.table.iter().filter_map(|l| match l.path {
            LinkPath::Tunnel(v) => Some(v),
            _ => None,
        }));
        let ids: Vec<NodeId> = self.table.ids().collect();
        for id in ids {
            let wants_you = wanted.contains(&id);
            let msg = Message::Neighbors { src: self.id, wants_you, near: near.clone() };
            self.send_on_link(now, id, msg);
        }
    }

    fn flush(&mut self, now: SimTime) {
        if self.neighbors_dirty && self.started {
            self.neighbors_dirty = false;
            self.send_neighbors(now);
        }
    }

    fn stabilize(&mut self, now: SimTime) {
        if self.table.is_empty() && !self.seeds.is_empty() {
            self.start_seed_attempt(now);
        }
        let known_ttl = self.config.known_ttl;
        self.known.retain(|_, k| now.saturating_since(k.heard_at) < known_ttl);
        let stale = self.config.handshake_window();
        self.pending_confirm.retain(|_, (_, t)| now.saturating_since(*t) < stale);
        let tunnel_keep = self.config.ping_period * 2;
        self.tunnel_use.retain(|_, t| now.saturating_since(*t) < tunnel_keep);

        // prune links nobody needs
        let (r, l) = self.near();
        let near: BTreeSet<NodeId> = r.into_iter().chain(l).collect();
        let forwarders: BTreeSet<NodeId> = self
            .table
            .iter()
            .filter_map(|l| match l.path {
                LinkPath::Tunnel(v) => Some(v),
                _ => None,
            })
            .collect();
        let tunnel_ends: BTreeSet<NodeId> = self.tunnel_use.keys().flat_map(|(a, b)| [*a, *b]).collect();
        let active: BTreeSet<NodeId> = self.attempts.iter().filter(|a| a.is_active()).filter_map(|a| a.target).collect();
        let grace = self.config.stabilize_period * 2;
        let prune_ticks = self.config.prune_ticks;
        let mut doomed = Vec::new();
        for link in self.table.iter_mut() {
            let id = link.remote;
            let wanted = near.contains(&id)
                || link.remote_wants
                || forwarders.contains(&id)
                || tunnel_ends.contains(&id)
                || active.contains(&id)
                || self.entry == Some(id)
                || now.saturating_since(link.established_at) < grace;
            if wanted {
                link.unwanted_ticks = 0;
            } else {
                link.unwanted_ticks += 1;
                if link.unwanted_ticks >= prune_ticks {
                    doomed.push(id);
                }
            }
        }
        for id in doomed {
            self.send_on_link(now, id, Message::Close { src: self.id, dst: id });
            self.drop_link(id);
        }

        self.send_neighbors(now);
        self.neighbors_dirty = false;
        self.connect_desired(now);

        // some near links may be unreachable; after a handshake window any link will do
        let window = self.config.handshake_window();
        let overdue = self.join_responder.is_some_and(|(_, at)| now.saturating_since(at) >= window);
        if !self.joined && overdue && self.table.ids().any(|id| Some(id) != self.entry) {
            self.mark_joined();
        }
        self.check_joined();
        if now >= self.next_rejoin && !self.seeds.is_empty() {
            self.next_rejoin = now + self.config.rejoin_period;
            match self.entry.filter(|e| self.table.contains(e)) {
                Some(entry) => self.send_self_lookup(now, entry, !self.joined),
                None => self.start_seed_attempt(now),
            }
        }

        if self.config.upgrade_links {
            let retry = self.config.ctm_retry;
            let upgrades: Vec<NodeId> = self
                .table
                .iter()
                .filter(|l| l.class() != LinkClass::Direct && !l.permanent)
                .filter(|l| l.upgrade_sent.is_none_or(|t| now.saturating_since(t) >= retry))
                .map(|l| l.remote)
                .filter(|id| !self.has_active_attempt(*id))
                .collect();
            for id in upgrades {
                if let Some(l) = self.table.get_mut(&id) {
                    l.upgrade_sent = Some(now);
                }
                self.send_ctm(now, id, None);
            }
        }
    }

    fn ping_tick(&mut self, now: SimTime) {
        let misses = self.config.ping_misses;
        let mut dead = Vec::new();
        let mut pings = Vec::new();
        for link in self.table.iter_mut() {
            if link.ping.is_some() {
                link.missed_pings += 1;
            }
            if link.missed_pings >= misses {
                dead.push(link.remote);
                continue;
            }
            let nonce = self.rng.random();
            link.ping = Some(nonce);
            pings.push((link.remote, nonce));
        }
        for id in dead {
            self.drop_link(id);
        }
        for (id, nonce) in pings {
            if self.table.contains(&id) {
                self.send_on_link(now, id, Message::Ping { src: self.id, dst: id, nonce });
            }
        }
    }
}
