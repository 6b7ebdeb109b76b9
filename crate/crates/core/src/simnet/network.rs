use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::net::Ipv4Addr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nat::{InboundVerdict, NatDevice, NatType};
use super::trace::{Trace, TraceRecord};
use super::{SimError, SimTime};

/// Largest UDP payload carried by the simulated network.
pub const MAX_DATAGRAM: usize = 65_507;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Endpoint {
    pub ip: Ipv4Addr,
    pub port: u16,
}

impl Endpoint {
    pub const fn new(ip: Ipv4Addr, port: u16) -> Self {
        Endpoint { ip, port }
    }
}

impl fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HostId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NatId(pub u32);

/// Provider network a host (or NAT) lives in; latency is a function of the pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NetworkId(pub u16);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attachment {
    Public,
    /// Behind a fresh NAT device of the given type.
    NewNat(NatType),
    /// Behind an existing device.
    SharedNat(NatId),
}

#[derive(Clone, Debug)]
pub struct NetConfig {
    pub same_network_latency: Duration,
    pub cross_network_latency: Duration,
    /// Between hosts behind the same NAT.
    pub lan_latency: Duration,
    /// Symmetric per-pair overrides.
    pub latency_overrides: BTreeMap<(NetworkId, NetworkId), Duration>,
    /// Extra uniform delay in `[0, jitter)`, drawn from the seeded generator.
    pub jitter: Duration,
    pub loss: f64,
    pub mapping_ttl: Duration,
    pub hairpin: fn(NatType) -> bool,
    pub public_pool_size: u32,
    pub seed: u64,
    pub record_trace: bool,
}

fn full_cone_hairpin(t: NatType) -> bool {
    t == NatType::FullCone
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            same_network_latency: Duration::from_millis(25),
            cross_network_latency: Duration::from_millis(100),
            lan_latency: Duration::from_millis(1),
            latency_overrides: BTreeMap::new(),
            jitter: Duration::ZERO,
            loss: 0.0,
            mapping_ttl: Duration::from_secs(60),
            hairpin: full_cone_hairpin,
            public_pool_size: 60_000,
            seed: 0,
            record_trace: false,
        }
    }
}

impl NetConfig {
    pub fn latency(&self, a: NetworkId, b: NetworkId) -> Duration {
        let key = if a <= b { (a, b) } else { (b, a) };
        if let Some(d) = self.latency_overrides.get(&key) {
            return *d;
        }
        if a == b {
            self.same_network_latency
        } else {
            self.cross_network_latency
        }
    }

    pub fn set_latency(&mut self, a: NetworkId, b: NetworkId, latency: Duration) {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.latency_overrides.insert(key, latency);
    }
}

/// An immutable datagram in flight.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatagramFrame {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub payload: Vec<u8>,
    pub injected_at: SimTime,
}

/// What the network hands to the host layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NetEvent {
    /// `frame.dst` is the receiving host's own (internal) endpoint.
    Datagram { host: HostId, frame: DatagramFrame },
    Timer { host: HostId, token: u64 },
}

impl NetEvent {
    pub fn host(&self) -> HostId {
        match self {
            NetEvent::Datagram { host, .. } | NetEvent::Timer { host, .. } => *host,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrafficStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropReason {
    Loss,
    Unroutable,
    NoBinding,
    Filtered,
    Hairpin,
    PortsExhausted,
    Unbound,
    HostDown,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Loss => "loss",
            DropReason::Unroutable => "unroutable",
            DropReason::NoBinding => "no-binding",
            DropReason::Filtered => "filtered",
            DropReason::Hairpin => "hairpin",
            DropReason::PortsExhausted => "ports-exhausted",
            DropReason::Unbound => "unbound",
            DropReason::HostDown => "host-down",
        }
    }
}

#[derive(Debug)]
struct HostState {
    ip: Ipv4Addr,
    nat: Option<NatId>,
    network: NetworkId,
    ports: BTreeSet<u16>,
    alive: bool,
    stats: TrafficStats,
}

#[derive(Debug)]
struct NatState {
    device: NatDevice,
    network: NetworkId,
    subnet: u32,
    next_host: u32,
}

#[derive(Clone, Copy, Debug)]
enum Owner {
    Public(HostId),
    NatExternal(NatId),
    Private(HostId),
}

#[derive(Debug)]
enum Pending {
    ArriveHost { origin: HostId, host: HostId, frame: DatagramFrame },
    ArriveNat { origin: HostId, nat: NatId, frame: DatagramFrame },
    Timer { host: HostId, token: u64 },
}

#[derive(Debug)]
struct Scheduled {
    time: SimTime,
    seq: u64,
    pending: Pending,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest (time, seq).
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Deterministic datagram network with virtual time and NAT devices.
///
/// Everything runs on the caller's thread: the owner pops events with
/// [`Network::next_event`] (or [`Network::run_until`]) and reacts by calling
/// [`Network::send`] and [`Network::schedule_timer`].
pub struct Network {
    config: NetConfig,
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    hosts: Vec<HostState>,
    nats: Vec<NatState>,
    owners: HashMap<Ipv4Addr, Owner>,
    next_public: u32,
    rng: ChaCha8Rng,
    stats: TrafficStats,
    drops: BTreeMap<DropReason, u64>,
    trace: Trace,
}

impl Network {
    pub fn new(config: NetConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let trace = Trace::new(config.record_trace);
        Network {
            config,
            now: SimTime::ZERO,
            seq: 0,
            queue: BinaryHeap::new(),
            hosts: Vec::new(),
            nats: Vec::new(),
            owners: HashMap::new(),
            next_public: 0,
            rng,
            stats: TrafficStats::default(),
            drops: BTreeMap::new(),
            trace,
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut NetConfig {
        &mut self.config
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut Trace {
        &mut self.trace
    }

    fn alloc_public_ip(&mut self) -> Result<Ipv4Addr, SimError> {
        if self.next_public >= self.config.public_pool_size {
            return Err(SimError::AddressPoolExhausted("public"));
        }
        self.next_public += 1;
        // 16.0.0.0/8 onwards
        Ok(Ipv4Addr::from(0x1000_0000 + self.next_public))
    }

    fn new_nat(&mut self, nat_type: NatType, network: NetworkId) -> Result<NatId, SimError> {
        let id = NatId(self.nats.len() as u32);
        if id.0 >= 1 << 16 {
            return Err(SimError::AddressPoolExhausted("private"));
        }
        let external = self.alloc_public_ip()?;
        let hairpin = (self.config.hairpin)(nat_type);
        let device = NatDevice::new(nat_type, external, self.config.mapping_ttl, hairpin);
        self.owners.insert(external, Owner::NatExternal(id));
        self.nats.push(NatState { device, network, subnet: 0x0a00_0000 | (id.0 << 8), next_host: 2 });
        Ok(id)
    }

    /// Adds a host. NATed hosts get a private address in their device's /24.
    pub fn create_host(&mut self, attachment: Attachment, network: NetworkId) -> Result<HostId, SimError> {
        let id = HostId(self.hosts.len() as u32);
        let (ip, nat, network) = match attachment {
            Attachment::Public => {
                let ip = self.alloc_public_ip()?;
                self.owners.insert(ip, Owner::Public(id));
                (ip, None, network)
            }
            Attachment::NewNat(t) => {
                let nat = self.new_nat(t, network)?;
                (self.alloc_private_ip(nat, id)?, Some(nat), network)
            }
            Attachment::SharedNat(nat) => {
                let state = self.nats.get(nat.0 as usize).ok_or(SimError::UnknownNat(nat))?;
                let network = state.network;
                (self.alloc_private_ip(nat, id)?, Some(nat), network)
            }
        };
        self.hosts.push(HostState {
            ip,
            nat,
            network,
            ports: BTreeSet::new(),
            alive: true,
            stats: TrafficStats::default(),
        });
        Ok(id)
    }

    fn alloc_private_ip(&mut self, nat: NatId, host: HostId) -> Result<Ipv4Addr, SimError> {
        let state = &mut self.nats[nat.0 as usize];
        if state.next_host > 254 {
            return Err(SimError::AddressPoolExhausted("private"));
        }
        let ip = Ipv4Addr::from(state.subnet | state.next_host);
        state.next_host += 1;
        self.owners.insert(ip, Owner::Private(host));
        Ok(ip)
    }

    fn host(&self, id: HostId) -> Result<&HostState, SimError> {
        self.hosts.get(id.0 as usize).ok_or(SimError::UnknownHost(id))
    }

    pub fn host_ip(&self, id: HostId) -> Ipv4Addr {
        self.hosts[id.0 as usize].ip
    }

    pub fn host_nat(&self, id: HostId) -> Option<NatId> {
        self.hosts[id.0 as usize].nat
    }

    pub fn host_network(&self, id: HostId) -> NetworkId {
        self.hosts[id.0 as usize].network
    }

    pub fn host_stats(&self, id: HostId) -> TrafficStats {
        self.hosts[id.0 as usize].stats
    }

    pub fn host_count(&self) -> usize {
        self.hosts.len()
    }

    pub fn bound_ports(&self, id: HostId) -> Vec<u16> {
        self.hosts[id.0 as usize].ports.iter().copied().collect()
    }

    pub fn is_alive(&self, id: HostId) -> bool {
        self.hosts[id.0 as usize].alive
    }

    pub fn nat(&self, id: NatId) -> &NatDevice {
        &self.nats[id.0 as usize].device
    }

    pub fn nat_mut(&mut self, id: NatId) -> &mut NatDevice {
        &mut self.nats[id.0 as usize].device
    }

    pub fn nat_count(&self) -> usize {
        self.nats.len()
    }

    pub fn stats(&self) -> TrafficStats {
        self.stats
    }

    pub fn drops(&self) -> &BTreeMap<DropReason, u64> {
        &self.drops
    }

    pub fn in_flight(&self) -> usize {
        self.queue.iter().filter(|s| !matches!(s.pending, Pending::Timer { .. })).count()
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn bind(&mut self, host: HostId, port: u16) -> Result<Endpoint, SimError> {
        if port == 0 {
            return Err(SimError::InvalidPort);
        }
        let state = self.hosts.get_mut(host.0 as usize).ok_or(SimError::UnknownHost(host))?;
        if !state.ports.insert(port) {
            return Err(SimError::PortInUse(port));
        }
        Ok(Endpoint::new(state.ip, port))
    }

    /// Takes a host off the network: pending timers and arrivals for it are discarded.
    pub fn kill_host(&mut self, host: HostId) {
        self.hosts[host.0 as usize].alive = false;
    }

    fn push(&mut self, time: SimTime, pending: Pending) {
        self.seq += 1;
        self.queue.push(Scheduled { time, seq: self.seq, pending });
    }

    pub fn schedule_timer(&mut self, host: HostId, at: SimTime, token: u64) {
        let at = at.max(self.now);
        self.push(at, Pending::Timer { host, token });
    }

    fn drop_frame(&mut self, origin: HostId, frame: &DatagramFrame, reason: DropReason) {
        self.stats.dropped += 1;
        self.hosts[origin.0 as usize].stats.dropped += 1;
        *self.drops.entry(reason).or_default() += 1;
        self.trace.record(TraceRecord {
            time: self.now,
            kind: "drop",
            src: frame.src.to_string(),
            dst: frame.dst.to_string(),
            bytes: frame.payload.len(),
            verdict: reason.as_str().to_string(),
        });
    }

    fn delay(&mut self, a: NetworkId, b: NetworkId) -> Duration {
        let base = self.config.latency(a, b);
        if self.config.jitter.is_zero() {
            base
        } else {
            let extra = self.rng.random_range(0..self.config.jitter.as_micros() as u64);
            base + Duration::from_micros(extra)
        }
    }

    /// Sends a datagram from `host:src_port` to `dst`.
    ///
    /// Routing failures and NAT filtering are counted drops, not errors.
    pub fn send(&mut self, host: HostId, src_port: u16, dst: Endpoint, payload: Vec<u8>) -> Result<(), SimError> {
        let state = self.host(host)?;
        if !state.ports.contains(&src_port) {
            return Err(SimError::UnboundPort(src_port));
        }
        if payload.len() > MAX_DATAGRAM {
            return Err(SimError::PayloadTooLarge(payload.len()));
        }
        let (src_ip, nat, src_net, alive) = (state.ip, state.nat, state.network, state.alive);
        let mut frame = DatagramFrame {
            src: Endpoint::new(src_ip, src_port),
            dst,
            payload,
            injected_at: self.now,
        };
        self.stats.sent += 1;
        self.hosts[host.0 as usize].stats.sent += 1;
        self.trace.record(TraceRecord {
            time: self.now,
            kind: "send",
            src: frame.src.to_string(),
            dst: frame.dst.to_string(),
            bytes: frame.payload.len(),
            verdict: format!("h{}", host.0),
        });
        if !alive {
            self.drop_frame(host, &frame, DropReason::HostDown);
            return Ok(());
        }
        if self.config.loss > 0.0 && self.rng.random::<f64>() < self.config.loss {
            self.drop_frame(host, &frame, DropReason::Loss);
            return Ok(());
        }

        if let Some(nat) = nat {
            // same LAN: private addresses are reachable directly
            if let Some(Owner::Private(peer)) = self.owners.get(&dst.ip).copied() {
                if self.hosts[peer.0 as usize].nat == Some(nat) {
                    let at = self.now + self.config.lan_latency;
                    self.push(at, Pending::ArriveHost { origin: host, host: peer, frame });
                    return Ok(());
                }
            }
            let external_ip = self.nats[nat.0 as usize].device.external_ip();
            let hairpin = dst.ip == external_ip;
            if hairpin && !self.nats[nat.0 as usize].device.hairpin() {
                self.drop_frame(host, &frame, DropReason::Hairpin);
                return Ok(());
            }
            let now = self.now;
            let Some(external) = self.nats[nat.0 as usize].device.outbound(now, frame.src, dst) else {
                self.drop_frame(host, &frame, DropReason::PortsExhausted);
                return Ok(());
            };
            self.trace.record(TraceRecord {
                time: self.now,
                kind: "nat-out",
                src: frame.src.to_string(),
                dst: dst.to_string(),
                bytes: frame.payload.len(),
                verdict: format!("map:{external}"),
            });
            frame.src = external;
            if hairpin {
                let at = self.now + self.config.lan_latency;
                self.push(at, Pending::ArriveNat { origin: host, nat, frame });
                return Ok(());
            }
        }

        match self.owners.get(&dst.ip).copied() {
            Some(Owner::Public(peer)) => {
                let d = self.delay(src_net, self.hosts[peer.0 as usize].network);
                let at = self.now + d;
                self.push(at, Pending::ArriveHost { origin: host, host: peer, frame });
            }
            Some(Owner::NatExternal(peer_nat)) => {
                let d = self.delay(src_net, self.nats[peer_nat.0 as usize].network);
                let at = self.now + d;
                self.push(at, Pending::ArriveNat { origin: host, nat: peer_nat, frame });
            }
            Some(Owner::Private(_)) | None => self.drop_frame(host, &frame, DropReason::Unroutable),
        }
        Ok(())
    }

    fn arrive_host(&mut self, origin: HostId, host: HostId, frame: DatagramFrame) -> Option<NetEvent> {
        let state = &self.hosts[host.0 as usize];
        if !state.alive {
            self.drop_frame(origin, &frame, DropReason::HostDown);
            return None;
        }
        if !state.ports.contains(&frame.dst.port) {
            self.drop_frame(origin, &frame, DropReason::Unbound);
            return None;
        }
        self.stats.delivered += 1;
        self.hosts[host.0 as usize].stats.delivered += 1;
        self.trace.record(TraceRecord {
            time: self.now,
            kind: "deliver",
            src: frame.src.to_string(),
            dst: frame.dst.to_string(),
            bytes: frame.payload.len(),
            verdict: format!("h{}", host.0),
        });
        Some(NetEvent::Datagram { host, frame })
    }

    fn arrive_nat(&mut self, origin: HostId, nat: NatId, mut frame: DatagramFrame) -> Option<NetEvent> {
        let verdict = self.nats[nat.0 as usize].device.inbound(self.now, frame.src, frame.dst);
        let internal = match verdict {
            InboundVerdict::Deliver(internal) => internal,
            InboundVerdict::NoBinding => {
                self.drop_frame(origin, &frame, DropReason::NoBinding);
                return None;
            }
            InboundVerdict::Filtered => {
                self.drop_frame(origin, &frame, DropReason::Filtered);
                return None;
            }
        };
        self.trace.record(TraceRecord {
            time: self.now,
            kind: "nat-in",
            src: frame.src.to_string(),
            dst: frame.dst.to_string(),
            bytes: frame.payload.len(),
            verdict: format!("admit:{internal}"),
        });
        frame.dst = internal;
        match self.owners.get(&internal.ip).copied() {
            Some(Owner::Private(host)) => self.arrive_host(origin, host, frame),
            _ => {
                self.drop_frame(origin, &frame, DropReason::Unroutable);
                None
            }
        }
    }

    /// Pops and processes queued events up to and including `limit`, returning the
    /// first one that reaches a host. Drops are handled internally.
    pub fn next_event(&mut self, limit: SimTime) -> Option<NetEvent> {
        while let Some(top) = self.queue.peek() {
            if top.time > limit {
                return None;
            }
            let Scheduled { time, pending, .. } = self.queue.pop().expect("peeked");
            debug_assert!(time >= self.now);
            self.now = time;
            let event = match pending {
                Pending::ArriveHost { origin, host, frame } => self.arrive_host(origin, host, frame),
                Pending::ArriveNat { origin, nat, frame } => self.arrive_nat(origin, nat, frame),
                Pending::Timer { host, token } => {
                    self.hosts[host.0 as usize].alive.then_some(NetEvent::Timer { host, token })
                }
            };
            if event.is_some() {
                return event;
            }
        }
        None
    }

    /// Moves the clock forward to `t` without processing anything.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Processes every event with time `<= t` and leaves the clock at `t`.
    /// Returns the number of events handed to `handler`.
    pub fn run_until<F>(&mut self, t: SimTime, mut handler: F) -> usize
    where
        F: FnMut(&mut Network, NetEvent),
    {
        let mut count = 0;
        while let Some(ev) = self.next_event(t) {
            count += 1;
            handler(self, ev);
        }
        self.advance_to(t);
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network {
        Network::new(NetConfig { record_trace: true, ..NetConfig::default() })
    }

    #[test]
    fn empty_run_processes_nothing() {
        let mut n = net();
        assert_eq!(n.run_until(SimTime::ZERO, |_, _| {}), 0);
    }

    #[test]
    fn timer_fires_and_clock_lands_on_target() {
        let mut n = net();
        let h = n.create_host(Attachment::Public, NetworkId(0)).unwrap();
        n.schedule_timer(h, SimTime::from_secs(5), 7);
        let mut seen = vec![];
        let count = n.run_until(SimTime::from_secs(10), |net, ev| seen.push((net.now(), ev)));
        assert_eq!(count, 1);
        assert_eq!(seen, vec![(SimTime::from_secs(5), NetEvent::Timer { host: h, token: 7 })]);
        assert_eq!(n.now(), SimTime::from_secs(10));
    }

    #[test]
    fn equal_times_fire_in_insertion_order() {
        let mut n = net();
        let h = n.create_host(Attachment::Public, NetworkId(0)).unwrap();
        for token in [3, 1, 2] {
            n.schedule_timer(h, SimTime::from_secs(1), token);
        }
        let mut tokens = vec![];
        n.run_until(SimTime::from_secs(1), |_, ev| {
            if let NetEvent::Timer { token, .. } = ev {
                tokens.push(token)
            }
        });
        assert_eq!(tokens, vec![3, 1, 2]);
    }

    #[test]
    fn public_send_arrives_after_base_latency() {
        let mut n = net();
        let a = n.create_host(Attachment::Public, NetworkId(0)).unwrap();
        let b = n.create_host(Attachment::Public, NetworkId(0)).unwrap();
        let c = n.create_host(Attachment::Public, NetworkId(1)).unwrap();
        n.bind(a, 100).unwrap();
        let eb = n.bind(b, 200).unwrap();
        let ec = n.bind(c, 300).unwrap();
        n.send(a, 100, eb, b"hi".to_vec()).unwrap();
        n.send(a, 100, ec, b"yo".to_vec()).unwrap();
        let mut got = vec![];
        n.run_until(SimTime::from_secs(1), |net, ev| got.push((net.now(), ev.host())));
        assert_eq!(got, vec![(SimTime::from_millis(25), b), (SimTime::from_millis(100), c)]);
    }

    #[test]
    fn natted_sender_appears_as_external_binding() {
        let mut n = net();
        let inside = n.create_host(Attachment::NewNat(NatType::Symmetric), NetworkId(0)).unwrap();
        let server = n.create_host(Attachment::Public, NetworkId(0)).unwrap();
        n.bind(inside, 15222).unwrap();
        let es = n.bind(server, 3478).unwrap();
        assert!(n.host_ip(inside).is_private());
        n.send(inside, 15222, es, vec![1]).unwrap();
        let mut src = None;
        n.run_until(SimTime::from_secs(1), |_, ev| {
            if let NetEvent::Datagram { frame, .. } = ev {
                src = Some(frame.src)
            }
        });
        let nat = n.host_nat(inside).unwrap();
        let binding = n.nat(nat).bindings(n.now()).next().unwrap().external;
        assert_eq!(src, Some(binding));
        assert_eq!(binding.ip, n.nat(nat).external_ip());
    }

    #[test]
    fn usage_errors() {
        let mut n = net();
        let a = n.create_host(Attachment::Public, NetworkId(0)).unwrap();
        let dst = Endpoint::new(Ipv4Addr::new(16, 0, 0, 9), 1);
        assert_eq!(n.send(a, 5, dst, vec![]), Err(SimError::UnboundPort(5)));
        n.bind(a, 5).unwrap();
        assert_eq!(n.bind(a, 5), Err(SimError::PortInUse(5)));
        assert_eq!(
            n.send(a, 5, dst, vec![0; MAX_DATAGRAM + 1]),
            Err(SimError::PayloadTooLarge(MAX_DATAGRAM + 1))
        );
        assert!(n.send(a, 5, dst, vec![0; MAX_DATAGRAM]).is_ok());
    }

    #[test]
    fn unroutable_and_filtered_are_counted() {
        let mut n = net();
        let a = n.create_host(Attachment::Public, NetworkId(0)).unwrap();
        let b = n.create_host(Attachment::NewNat(NatType::FullCone), NetworkId(0)).unwrap();
        n.bind(a, 5).unwrap();
        n.bind(b, 6).unwrap();
        n.send(a, 5, Endpoint::new(Ipv4Addr::new(99, 0, 0, 1), 1), vec![]).unwrap();
        // nothing bound on the NAT yet
        let ext = n.nat(n.host_nat(b).unwrap()).external_ip();
        n.send(a, 5, Endpoint::new(ext, 1024), vec![]).unwrap();
        // private address of another LAN
        n.send(a, 5, Endpoint::new(n.host_ip(b), 6), vec![]).unwrap();
        n.run_until(SimTime::from_secs(1), |_, _| {});
        let s = n.stats();
        assert_eq!((s.sent, s.delivered, s.dropped), (3, 0, 3));
        assert_eq!(n.drops()[&DropReason::Unroutable], 2);
        assert_eq!(n.drops()[&DropReason::NoBinding], 1);
        assert_eq!(n.host_stats(a).dropped, 3);
    }

    #[test]
    fn shared_nat_hosts_share_external_ip_and_lan() {
        let mut n = net();
        let a = n.create_host(Attachment::NewNat(NatType::FullCone), NetworkId(2)).unwrap();
        let nat = n.host_nat(a).unwrap();
        let b = n.create_host(Attachment::SharedNat(nat), NetworkId(9)).unwrap();
        assert_eq!(n.host_nat(b), Some(nat));
        assert_eq!(n.host_network(b), NetworkId(2));
        n.bind(a, 1).unwrap();
        let eb = n.bind(b, 2).unwrap();
        n.send(a, 1, eb, vec![]).unwrap();
        let mut at = None;
        n.run_until(SimTime::from_secs(1), |net, _| at = Some(net.now()));
        assert_eq!(at, Some(SimTime::from_millis(1)));
    }

    #[test]
    fn hairpin_allowed_only_for_full_cone_by_default() {
        for (t, expect) in [(NatType::FullCone, true), (NatType::PortRestrictedCone, false)] {
            let mut n = net();
            let a = n.create_host(Attachment::NewNat(t), NetworkId(0)).unwrap();
            let nat = n.host_nat(a).unwrap();
            let b = n.create_host(Attachment::SharedNat(nat), NetworkId(0)).unwrap();
            let server = n.create_host(Attachment::Public, NetworkId(0)).unwrap();
            n.bind(a, 1).unwrap();
            n.bind(b, 2).unwrap();
            let es = n.bind(server, 3).unwrap();
            // b's external mapping, learnt by talking to the server
            n.send(b, 2, es, vec![]).unwrap();
            n.run_until(SimTime::from_secs(1), |_, _| {});
            let b_ext = n.nat(nat).bindings(n.now()).find(|x| x.internal.port == 2).unwrap().external;
            if t == NatType::PortRestrictedCone {
                assert!(!n.nat(nat).hairpin());
            }
            n.send(a, 1, b_ext, vec![]).unwrap();
            let mut delivered = false;
            n.run_until(SimTime::from_secs(2), |_, ev| delivered |= ev.host() == b);
            assert_eq!(delivered, expect, "{t}");
        }
    }

    #[test]
    fn public_pool_exhaustion_is_a_configuration_error() {
        let mut n = Network::new(NetConfig { public_pool_size: 2, ..NetConfig::default() });
        n.create_host(Attachment::Public, NetworkId(0)).unwrap();
        n.create_host(Attachment::NewNat(NatType::FullCone), NetworkId(0)).unwrap();
        assert_eq!(
            n.create_host(Attachment::Public, NetworkId(0)),
            Err(SimError::AddressPoolExhausted("public"))
        );
    }

    #[test]
    fn dead_hosts_receive_nothing() {
        let mut n = net();
        let a = n.create_host(Attachment::Public, NetworkId(0)).unwrap();
        let b = n.create_host(Attachment::Public, NetworkId(0)).unwrap();
        n.bind(a, 1).unwrap();
        let eb = n.bind(b, 1).unwrap();
        n.schedule_timer(b, SimTime::from_secs(1), 1);
        n.send(a, 1, eb, vec![]).unwrap();
        n.kill_host(b);
        assert_eq!(n.run_until(SimTime::from_secs(2), |_, _| {}), 0);
        assert_eq!(n.drops()[&DropReason::HostDown], 1);
    }
}
