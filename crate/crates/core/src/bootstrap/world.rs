use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::identifiers::{Namespace, NodeId};
use crate::overlay::OverlayConfig;
use crate::rendezvous::presence::{
    FederationServer, PresenceProvider, PresenceProviderConfig, XMPP_CLIENT_PORT, XMPP_SERVER_PORT,
};
use crate::rendezvous::stun::{stun_server_reply, STUN_PORT};
use crate::rendezvous::{DhtProvider, DhtProviderConfig, ProviderKind, RendezvousProvider};
use crate::simnet::{Attachment, Endpoint, HostId, NetConfig, NetEvent, Network, NetworkId, SimError, SimTime};

use super::host::{PeerHost, OVERLAY_PORT};
use super::session::{BootstrapSession, SessionConfig};

/// Provider choice plus its configuration.
#[derive(Clone, Debug)]
pub enum ProviderSetup {
    Dht(DhtProviderConfig),
    Presence(PresenceProviderConfig),
}

impl From<ProviderKind> for ProviderSetup {
    fn from(kind: ProviderKind) -> Self {
        match kind {
            ProviderKind::Dht => ProviderSetup::Dht(DhtProviderConfig::default()),
            ProviderKind::Presence => ProviderSetup::Presence(PresenceProviderConfig::default()),
        }
    }
}

pub struct FederationHost {
    pub server: FederationServer,
    endpoint: Endpoint,
    armed: BTreeSet<SimTime>,
}

pub enum Role {
    Peer(Box<PeerHost>),
    Stun,
    Federation(Box<FederationHost>),
}

/// A simulated network plus every host's protocol stack, driven by one event loop.
pub struct World {
    net: Network,
    hosts: BTreeMap<HostId, Role>,
    domains: BTreeMap<String, HostId>,
    rng: ChaCha8Rng,
}

impl World {
    pub fn new(config: NetConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e_ed0f_b007);
        World { net: Network::new(config), hosts: BTreeMap::new(), domains: BTreeMap::new(), rng }
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn now(&self) -> SimTime {
        self.net.now()
    }

    pub fn add_peer(&mut self, attachment: Attachment, network: NetworkId) -> Result<HostId, SimError> {
        let host = self.net.create_host(attachment, network)?;
        let local = self.net.bind(host, OVERLAY_PORT)?;
        self.hosts.insert(host, Role::Peer(Box::new(PeerHost::new(host, local))));
        Ok(host)
    }

    pub fn peer(&self, host: HostId) -> &PeerHost {
        match self.hosts.get(&host) {
            Some(Role::Peer(p)) => p,
            _ => panic!("{host:?} is not a peer host"),
        }
    }

    pub fn peer_mut(&mut self, host: HostId) -> &mut PeerHost {
        match self.hosts.get_mut(&host) {
            Some(Role::Peer(p)) => p,
            _ => panic!("{host:?} is not a peer host"),
        }
    }

    pub fn peers(&self) -> impl Iterator<Item = &PeerHost> {
        self.hosts.values().filter_map(|r| match r {
            Role::Peer(p) => Some(p.as_ref()),
            _ => None,
        })
    }

    pub fn peers_mut(&mut self) -> impl Iterator<Item = &mut PeerHost> {
        self.hosts.values_mut().filter_map(|r| match r {
            Role::Peer(p) => Some(p.as_mut()),
            _ => None,
        })
    }

    /// Runs `f` on a peer host with the clock and network, e.g. to inject traffic.
    pub fn with_peer<R>(&mut self, host: HostId, f: impl FnOnce(&mut PeerHost, SimTime, &mut Network) -> R) -> R {
        let now = self.net.now();
        let World { net, hosts, .. } = self;
        match hosts.get_mut(&host) {
            Some(Role::Peer(p)) => f(p, now, net),
            _ => panic!("{host:?} is not a peer host"),
        }
    }

    pub fn is_alive(&self, host: HostId) -> bool {
        self.net.is_alive(host)
    }

    pub fn random_id(&mut self) -> NodeId {
        NodeId::random(&mut self.rng)
    }

    /// Gives `host` a public overlay node with a random id and joins it through `seeds`.
    pub fn start_public(&mut self, host: HostId, config: OverlayConfig, seeds: Vec<Endpoint>) -> NodeId {
        let id = self.random_id();
        let seed = self.rng.random();
        let now = self.net.now();
        let World { net, hosts, .. } = self;
        let Some(Role::Peer(p)) = hosts.get_mut(&host) else { panic!("{host:?} is not a peer host") };
        p.set_public(id, config, seed);
        p.start_public(now, net, seeds);
        id
    }

    /// Adds a private instance for `namespace`; it starts with [`start_privates`](Self::start_privates).
    pub fn add_private(
        &mut self,
        host: HostId,
        namespace: Namespace,
        provider: impl Into<ProviderSetup>,
        session: SessionConfig,
        overlay: OverlayConfig,
    ) -> usize {
        let provider: Box<dyn RendezvousProvider> = match provider.into() {
            ProviderSetup::Dht(c) => Box::new(DhtProvider::new(namespace.key(), c)),
            ProviderSetup::Presence(c) => Box::new(PresenceProvider::new(namespace.key(), c, self.rng.random())),
        };
        let session = BootstrapSession::new(namespace, provider, session, self.rng.random());
        let id = self.random_id();
        let seed = self.rng.random();
        self.peer_mut(host).add_private(id, overlay, session, seed)
    }

    pub fn start_privates(&mut self, host: HostId) {
        let now = self.net.now();
        let World { net, hosts, .. } = self;
        if let Some(Role::Peer(p)) = hosts.get_mut(&host) {
            p.start_privates(now, net);
        }
    }

    pub fn add_stun_server(&mut self, network: NetworkId) -> Result<Endpoint, SimError> {
        let host = self.net.create_host(Attachment::Public, network)?;
        let ep = self.net.bind(host, STUN_PORT)?;
        self.hosts.insert(host, Role::Stun);
        Ok(ep)
    }

    pub fn attach_stun(&mut self, host: HostId, server: Endpoint) {
        let txid: [u8; 12] = self.rng.random();
        self.peer_mut(host).set_stun(server, txid);
    }

    /// Adds a federation server for `domain`, peered with every existing one.
    pub fn add_federation_server(&mut self, domain: &str, network: NetworkId) -> Result<Endpoint, SimError> {
        let host = self.net.create_host(Attachment::Public, network)?;
        let endpoint = self.net.bind(host, XMPP_SERVER_PORT)?;
        let mut server = FederationServer::new(domain, self.rng.random());
        let others: Vec<(String, HostId)> = self.domains.iter().map(|(d, h)| (d.clone(), *h)).collect();
        for (d, h) in others {
            if let Some(Role::Federation(f)) = self.hosts.get_mut(&h) {
                f.server.add_peer(domain, endpoint);
                server.add_peer(&d, f.endpoint);
            }
        }
        self.domains.insert(domain.to_string(), host);
        self.hosts.insert(host, Role::Federation(Box::new(FederationHost { server, endpoint, armed: BTreeSet::new() })));
        Ok(endpoint)
    }

    pub fn federation(&self, domain: &str) -> Option<&FederationServer> {
        match self.hosts.get(self.domains.get(domain)?) {
            Some(Role::Federation(f)) => Some(&f.server),
            _ => None,
        }
    }

    pub fn federation_mut(&mut self, domain: &str) -> Option<&mut FederationServer> {
        let host = *self.domains.get(domain)?;
        match self.hosts.get_mut(&host) {
            Some(Role::Federation(f)) => Some(&mut f.server),
            _ => None,
        }
    }

    pub fn federation_endpoint(&self, domain: &str) -> Option<Endpoint> {
        match self.hosts.get(self.domains.get(domain)?) {
            Some(Role::Federation(f)) => Some(f.endpoint),
            _ => None,
        }
    }

    pub fn attach_xmpp(&mut self, host: HostId, account: &str, server: Endpoint) -> Result<(), SimError> {
        self.net.bind(host, XMPP_CLIENT_PORT)?;
        self.peer_mut(host).set_xmpp(account, server);
        Ok(())
    }

    /// Takes a host off the network without any goodbye.
    pub fn kill(&mut self, host: HostId) {
        self.net.kill_host(host);
    }

    fn dispatch(net: &mut Network, hosts: &mut BTreeMap<HostId, Role>, ev: NetEvent) {
        let now = net.now();
        match ev {
            NetEvent::Datagram { host, frame } => match hosts.get_mut(&host) {
                Some(Role::Peer(p)) => p.handle_datagram(now, net, frame.dst.port, frame.src, &frame.payload),
                Some(Role::Stun) => {
                    if let Some(reply) = stun_server_reply(frame.src, &frame.payload) {
                        let _ = net.send(host, frame.dst.port, frame.src, reply);
                    }
                }
                Some(Role::Federation(f)) => {
                    f.server.handle(now, frame.src, &frame.payload);
                    Self::pump_federation(net, host, f);
                }
                None => {}
            },
            NetEvent::Timer { host, .. } => match hosts.get_mut(&host) {
                Some(Role::Peer(p)) => p.handle_timer(now, net),
                Some(Role::Federation(f)) => {
                    f.armed.retain(|t| *t > now);
                    if f.server.poll_timeout().is_some_and(|t| t <= now) {
                        f.server.handle_timeout(now);
                    }
                    Self::pump_federation(net, host, f);
                }
                _ => {}
            },
        }
    }

    fn pump_federation(net: &mut Network, host: HostId, f: &mut FederationHost) {
        while let Some((dst, bytes)) = f.server.poll_transmit() {
            let _ = net.send(host, XMPP_SERVER_PORT, dst, bytes);
        }
        if let Some(t) = f.server.poll_timeout() {
            if f.armed.insert(t) {
                net.schedule_timer(host, t, 0);
            }
        }
    }

    /// Processes every event up to `t` and leaves the clock there.
    pub fn run_until(&mut self, t: SimTime) {
        let World { net, hosts, .. } = self;
        while let Some(ev) = net.next_event(t) {
            Self::dispatch(net, hosts, ev);
        }
        net.advance_to(t);
    }

    /// Runs in `step` increments while `keep_going` holds, up to `limit`.
    /// Returns true if `keep_going` turned false before the limit.
    pub fn run_while<F>(&mut self, limit: SimTime, step: std::time::Duration, mut keep_going: F) -> bool
    where
        F: FnMut(&World) -> bool,
    {
        while self.now() < limit {
            if !keep_going(self) {
                return true;
            }
            let next = (self.now() + step).min(limit);
            self.run_until(next);
        }
        !keep_going(self)
    }

    /// Live NAT bindings beyond the first for any (internal host, remote) pair.
    pub fn extra_bindings(&self) -> usize {
        let now = self.net.now();
        let mut extra = 0;
        for n in 0..self.net.nat_count() {
            let mut seen: BTreeMap<(Ipv4Addr, Option<Endpoint>), usize> = BTreeMap::new();
            for b in self.net.nat(crate::simnet::NatId(n as u32)).bindings(now) {
                *seen.entry((b.internal.ip, b.remote_key)).or_default() += 1;
            }
            extra += seen.values().map(|c| c - 1).sum::<usize>();
        }
        extra
    }
}
