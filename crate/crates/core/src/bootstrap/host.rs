use std::collections::{BTreeMap, BTreeSet};

use crate::dht::{DhtConfig, DhtError, DhtEvent, DhtNode, RequestId};
use crate::identifiers::{Namespace, NodeId, Scheme, TransportAddress};
use crate::overlay::{DeliveryMode, LinkPath, OverlayConfig, OverlayEvent, OverlayNode, PayloadProtocol, RoutedPacket};
use crate::rendezvous::presence::wire::iq;
use crate::rendezvous::presence::{xmpp_address, XmppClient, XmppEvent, XMPP_CLIENT_PORT};
use crate::rendezvous::stun::{StunClient, StunOutcome};
use crate::rendezvous::{ProviderCommand, ProviderInput, ProviderKind};
use crate::simnet::{Endpoint, HostId, Network, SimTime, TraceRecord};
use crate::transports::{
    encode_path_frame, subring_address, subring_public_id, Inbound, PathDemux, SubringFrame, SubringRelay, PUBLIC_PATH,
};

use super::session::BootstrapSession;

/// The one UDP port every peer host binds for overlay traffic and STUN.
pub const OVERLAY_PORT: u16 = 15222;

/// First byte of audit traffic.
pub const AUDIT_TAG: u8 = 0xA0;

pub struct PublicInstance {
    pub node: OverlayNode,
    pub dht: DhtNode,
    dht_owner: BTreeMap<RequestId, usize>,
    /// Results of requests issued through [`PeerHost::dht_put`] and [`PeerHost::dht_get`].
    dht_results: Vec<DhtEvent>,
}

pub struct PrivateInstance {
    pub namespace: Namespace,
    pub path: String,
    pub node: OverlayNode,
    pub session: BootstrapSession,
    pub subring: SubringRelay,
    started: bool,
    /// Phase-log entries already written to the trace.
    traced: usize,
}

/// An audit-tagged application payload delivered on this host.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AppDelivery {
    /// 0 for the public overlay, `i + 1` for private instance `i`.
    pub slot: usize,
    pub src: NodeId,
    pub dst: NodeId,
    pub payload: Vec<u8>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HostCounters {
    /// Subring frames naming a namespace with no local instance.
    pub subring_unmatched: u64,
    pub send_errors: u64,
}

/// A peer machine: one overlay socket shared by the public overlay and any
/// number of private instances, plus optional STUN and presence clients.
pub struct PeerHost {
    host: HostId,
    local: Endpoint,
    demux: PathDemux,
    pub public: Option<PublicInstance>,
    pub privates: Vec<PrivateInstance>,
    stun: Option<StunClient>,
    xmpp: Option<XmppClient>,
    reflected: Option<Endpoint>,
    reflection_done: bool,
    armed: BTreeSet<SimTime>,
    audit: Option<Vec<AppDelivery>>,
    counters: HostCounters,
}

impl PeerHost {
    /// `local` must already be bound on [`OVERLAY_PORT`].
    pub fn new(host: HostId, local: Endpoint) -> Self {
        PeerHost {
            host,
            local,
            demux: PathDemux::new(),
            public: None,
            privates: Vec::new(),
            stun: None,
            xmpp: None,
            reflected: None,
            reflection_done: false,
            armed: BTreeSet::new(),
            audit: None,
            counters: HostCounters::default(),
        }
    }

    pub fn host(&self) -> HostId {
        self.host
    }

    pub fn local(&self) -> Endpoint {
        self.local
    }

    pub fn demux(&self) -> &PathDemux {
        &self.demux
    }

    pub fn counters(&self) -> HostCounters {
        self.counters
    }

    pub fn reflected(&self) -> Option<Endpoint> {
        self.reflected
    }

    pub fn xmpp(&self) -> Option<&XmppClient> {
        self.xmpp.as_ref()
    }

    pub fn enable_audit(&mut self) {
        self.audit.get_or_insert_with(Vec::new);
    }

    pub fn take_audit(&mut self) -> Vec<AppDelivery> {
        self.audit.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Issues a put on the public DHT outside any session; see [`take_dht_results`](Self::take_dht_results).
    pub fn dht_put(
        &mut self,
        now: SimTime,
        net: &mut Network,
        key: NodeId,
        value: Vec<u8>,
        ttl_secs: u32,
    ) -> Result<RequestId, DhtError> {
        let public = self.public.as_mut().expect("dht_put needs a public overlay");
        let req = public.dht.put(now, &mut public.node, key, value, ttl_secs)?;
        self.pump(now, net);
        Ok(req)
    }

    pub fn dht_get(&mut self, now: SimTime, net: &mut Network, key: NodeId) -> RequestId {
        let public = self.public.as_mut().expect("dht_get needs a public overlay");
        let req = public.dht.get(now, &mut public.node, key);
        self.pump(now, net);
        req
    }

    pub fn take_dht_results(&mut self) -> Vec<DhtEvent> {
        self.public.as_mut().map(|p| std::mem::take(&mut p.dht_results)).unwrap_or_default()
    }

    /// Routes an application payload on the public overlay (`slot` 0) or private instance `slot - 1`.
    pub fn route_app(&mut self, now: SimTime, net: &mut Network, slot: usize, dst: NodeId, mode: DeliveryMode, payload: Vec<u8>) {
        let node = match slot {
            0 => &mut self.public.as_mut().expect("no public overlay").node,
            i => &mut self.privates[i - 1].node,
        };
        node.route(now, dst, mode, PayloadProtocol::App, payload);
        self.pump(now, net);
    }

    pub fn set_public(&mut self, id: NodeId, config: OverlayConfig, seed: u64) {
        let mut node = OverlayNode::new(id, config, seed);
        node.set_local_endpoint(self.local);
        self.demux.register(PUBLIC_PATH, 0).expect("public path registered once");
        for p in &mut self.privates {
            p.node.add_relay_address(subring_address(id));
        }
        self.public = Some(PublicInstance { node, dht: DhtNode::new(DhtConfig::default()), dht_owner: BTreeMap::new(), dht_results: Vec::new() });
    }

    pub fn add_private(&mut self, id: NodeId, config: OverlayConfig, session: BootstrapSession, seed: u64) -> usize {
        let namespace = session.namespace().clone();
        let path = namespace.overlay_path();
        let index = self.privates.len();
        self.demux.register(&path, index + 1).expect("one instance per namespace");
        let mut node = OverlayNode::new(id, config, seed);
        node.set_local_endpoint(self.local);
        node.set_path(Some(path[1..].to_string()));
        if let Some(public) = &self.public {
            node.add_relay_address(subring_address(public.node.id()));
        }
        if let Some(ep) = self.reflected {
            node.add_reflected(ep);
        }
        let subring = SubringRelay::new(namespace.key());
        self.privates.push(PrivateInstance { namespace, path, node, session, subring, started: false, traced: 0 });
        index
    }

    pub fn set_stun(&mut self, server: Endpoint, txid: [u8; 12]) {
        self.stun = Some(StunClient::new(server, txid));
    }

    /// The caller binds [`XMPP_CLIENT_PORT`] first.
    pub fn set_xmpp(&mut self, account: &str, server: Endpoint) {
        self.xmpp = Some(XmppClient::new(account, server));
    }

    pub fn start_public(&mut self, now: SimTime, net: &mut Network, seeds: Vec<Endpoint>) {
        if let Some(p) = &mut self.public {
            p.node.join(now, seeds);
        }
        self.pump(now, net);
    }

    /// Starts reflection, then every private session not yet started.
    pub fn start_privates(&mut self, now: SimTime, net: &mut Network) {
        if let Some(s) = &mut self.stun {
            s.start(now);
        }
        let public_joined = self.public.as_ref().is_some_and(|p| p.node.is_joined());
        for p in &mut self.privates {
            if p.started {
                continue;
            }
            p.started = true;
            p.node.start(now);
            p.session.start(now, &mut p.node);
            if self.reflection_done {
                p.session.on_reflected(now, &mut p.node);
            }
            if public_joined && p.session.provider().kind() == ProviderKind::Dht {
                p.session.handle_provider_input(now, &mut p.node, ProviderInput::SubstrateReady);
            }
        }
        self.pump(now, net);
    }

    pub fn handle_datagram(&mut self, now: SimTime, net: &mut Network, dst_port: u16, src: Endpoint, bytes: &[u8]) {
        if dst_port == XMPP_CLIENT_PORT {
            if let Some(x) = &mut self.xmpp {
                x.handle(now, bytes);
            }
        } else {
            match self.demux.classify(bytes) {
                Inbound::Stun(b) => {
                    let outcome = self.stun.as_mut().and_then(|s| s.handle_response(b));
                    self.on_stun(now, outcome);
                }
                Inbound::Overlay { slot: 0, inner } => {
                    if let Some(p) = &mut self.public {
                        p.node.handle_datagram(now, src, inner);
                    }
                }
                Inbound::Overlay { slot, inner } => self.privates[slot - 1].node.handle_datagram(now, src, inner),
                Inbound::Dropped => {}
            }
        }
        self.pump(now, net);
    }

    pub fn handle_timer(&mut self, now: SimTime, net: &mut Network) {
        self.armed.retain(|t| *t > now);
        let due = |t: Option<SimTime>| t.is_some_and(|t| t <= now);
        if let Some(p) = &mut self.public {
            if due(p.node.poll_timeout()) {
                p.node.handle_timeout(now);
            }
            if due(p.dht.poll_timeout()) {
                p.dht.handle_timeout(now, &mut p.node);
            }
        }
        for p in &mut self.privates {
            if due(p.node.poll_timeout()) {
                p.node.handle_timeout(now);
            }
            if due(p.session.poll_timeout()) {
                p.session.handle_timeout(now, &mut p.node);
            }
            if due(p.subring.poll_timeout()) || p.subring.has_queued() {
                if let Some(public) = &mut self.public {
                    p.subring.handle_timeout(now, &mut public.node);
                }
            }
        }
        let stun = match &mut self.stun {
            Some(s) if due(s.poll_timeout()) => s.handle_timeout(now),
            _ => None,
        };
        self.on_stun(now, stun);
        if let Some(x) = &mut self.xmpp {
            if due(x.poll_timeout()) {
                x.handle_timeout(now);
            }
        }
        self.pump(now, net);
    }

    fn on_stun(&mut self, now: SimTime, outcome: Option<StunOutcome>) {
        match outcome {
            Some(StunOutcome::Mapped(ep)) => {
                self.learn_reflected(ep);
                self.reflection_complete(now);
            }
            Some(StunOutcome::Unavailable) => self.reflection_complete(now),
            _ => {}
        }
    }

    fn learn_reflected(&mut self, ep: Endpoint) {
        self.reflected = Some(ep);
        for p in &mut self.privates {
            p.node.add_reflected(ep);
        }
    }

    /// Reflection is over: the public overlay joined or the binding service answered (or gave up).
    fn reflection_complete(&mut self, now: SimTime) {
        self.reflection_done = true;
        for p in &mut self.privates {
            if p.started {
                p.session.on_reflected(now, &mut p.node);
            }
        }
    }

    fn next_deadline(&self) -> Option<SimTime> {
        let mut out: Vec<Option<SimTime>> = Vec::new();
        if let Some(p) = &self.public {
            out.push(p.node.poll_timeout());
            out.push(p.dht.poll_timeout());
        }
        for p in &self.privates {
            out.push(p.node.poll_timeout());
            out.push(p.session.poll_timeout());
            out.push(p.subring.poll_timeout());
        }
        out.push(self.stun.as_ref().and_then(|s| s.poll_timeout()));
        out.push(self.xmpp.as_ref().and_then(|x| x.poll_timeout()));
        out.into_iter().flatten().min()
    }

    fn send(&mut self, net: &mut Network, port: u16, dst: Endpoint, bytes: Vec<u8>) {
        if net.send(self.host, port, dst, bytes).is_err() {
            self.counters.send_errors += 1;
        }
    }

    /// Drains every component until nothing more comes out, then arms the next timer.
    pub fn pump(&mut self, now: SimTime, net: &mut Network) {
        loop {
            let mut progress = false;
            progress |= self.pump_public(now, net);
            for i in 0..self.privates.len() {
                progress |= self.pump_private(now, net, i);
            }
            progress |= self.pump_clients(now, net);
            if !progress {
                break;
            }
        }
        for p in &mut self.privates {
            for (t, phase) in &p.session.phase_log()[p.traced..] {
                net.trace_mut().record(TraceRecord {
                    time: *t,
                    kind: "phase",
                    src: p.node.id().to_string(),
                    dst: p.path.clone(),
                    bytes: 0,
                    verdict: phase.as_str().to_string(),
                });
            }
            p.traced = p.session.phase_log().len();
        }
        if let Some(t) = self.next_deadline() {
            if self.armed.insert(t) {
                net.schedule_timer(self.host, t, 0);
            }
        }
    }

    fn pump_public(&mut self, now: SimTime, net: &mut Network) -> bool {
        let mut progress = false;
        let Some(public) = &mut self.public else { return false };
        let mut frames = Vec::new();
        while let Some(t) = public.node.poll_transmit() {
            if let LinkPath::Direct(ep) = t.path {
                frames.push((ep, encode_path_frame(PUBLIC_PATH, &t.bytes)));
            }
        }
        let mut events = Vec::new();
        while let Some(ev) = public.node.poll_event() {
            events.push(ev);
        }
        let mut dht_events = Vec::new();
        while let Some(ev) = public.dht.poll_event() {
            dht_events.push(ev);
        }
        progress |= !frames.is_empty() || !events.is_empty() || !dht_events.is_empty();
        for (ep, bytes) in frames {
            self.send(net, OVERLAY_PORT, ep, bytes);
        }
        for ev in events {
            self.on_public_event(now, ev);
        }
        for ev in dht_events {
            self.on_dht_event(now, ev);
        }
        progress
    }

    fn on_public_event(&mut self, now: SimTime, ev: OverlayEvent) {
        match ev {
            OverlayEvent::Reflected(ep) => self.learn_reflected(ep),
            OverlayEvent::Joined => {
                self.reflection_complete(now);
                for p in &mut self.privates {
                    if p.started && p.session.provider().kind() == ProviderKind::Dht {
                        p.session.handle_provider_input(now, &mut p.node, ProviderInput::SubstrateReady);
                    }
                }
            }
            OverlayEvent::Delivered(packet) => {
                let public = self.public.as_mut().expect("public event");
                match packet.proto {
                    PayloadProtocol::DhtRpc => public.dht.handle_packet(now, &mut public.node, &packet),
                    PayloadProtocol::App => Self::audit_packet(&mut self.audit, 0, &packet),
                    PayloadProtocol::Subring => {
                        let Ok(frame) = SubringFrame::decode(&packet.payload) else { return };
                        match self.privates.iter_mut().find(|p| p.namespace.key() == frame.namespace) {
                            Some(p) => {
                                let own = p.node.id();
                                if let Some((from, bytes)) =
                                    p.subring.receive(now, &mut public.node, packet.src, frame, own)
                                {
                                    p.node.handle_relay(now, from, &bytes);
                                }
                            }
                            None => self.counters.subring_unmatched += 1,
                        }
                    }
                    _ => {}
                }
            }
            _ => {}
        }
    }

    fn on_dht_event(&mut self, now: SimTime, ev: DhtEvent) {
        let public = self.public.as_mut().expect("dht event");
        let req = match &ev {
            DhtEvent::PutDone { req, .. } | DhtEvent::GetDone { req, .. } => *req,
        };
        let Some(i) = public.dht_owner.remove(&req) else {
            public.dht_results.push(ev);
            return;
        };
        let input = match ev {
            DhtEvent::PutDone { ok, .. } => ProviderInput::DhtPutDone { ok },
            DhtEvent::GetDone { values, determinate, .. } => ProviderInput::DhtGetDone { values, determinate },
        };
        let p = &mut self.privates[i];
        p.session.handle_provider_input(now, &mut p.node, input);
    }

    fn audit_packet(audit: &mut Option<Vec<AppDelivery>>, slot: usize, packet: &RoutedPacket) {
        if let Some(log) = audit {
            if packet.payload.first() == Some(&AUDIT_TAG) {
                log.push(AppDelivery { slot, src: packet.src, dst: packet.dst, payload: packet.payload.clone() });
            }
        }
    }

    fn pump_private(&mut self, now: SimTime, net: &mut Network, i: usize) -> bool {
        let mut progress = false;
        let mut datagrams = Vec::new();
        {
            let p = &mut self.privates[i];
            while let Some(t) = p.node.poll_transmit() {
                progress = true;
                match t.path {
                    LinkPath::Direct(ep) => datagrams.push((ep, encode_path_frame(&p.path, &t.bytes))),
                    LinkPath::Relay(addr) if addr.scheme == Scheme::Xmpp => {
                        if let (Some(x), Some(to)) = (&mut self.xmpp, addr.xmpp_identifier()) {
                            let mut payload = vec![iq::OVERLAY_FRAME];
                            payload.extend_from_slice(&t.bytes);
                            x.send_iq(now, &to, payload);
                        }
                    }
                    LinkPath::Relay(addr) => {
                        if let (Some(public), Some(dst_public)) = (&mut self.public, subring_public_id(&addr)) {
                            let src = p.node.id();
                            p.subring.send(now, &mut public.node, dst_public, src, t.remote, t.bytes);
                        }
                    }
                    LinkPath::Tunnel(_) => {}
                }
            }
            let mut events = Vec::new();
            while let Some(ev) = p.node.poll_event() {
                events.push(ev);
            }
            progress |= !events.is_empty();
            for ev in events {
                if let OverlayEvent::Delivered(packet) = &ev {
                    Self::audit_packet(&mut self.audit, i + 1, packet);
                }
                p.session.handle_overlay_event(now, &mut p.node, &ev);
            }
        }
        for (ep, bytes) in datagrams {
            self.send(net, OVERLAY_PORT, ep, bytes);
        }
        while let Some(cmd) = self.privates[i].session.poll_command() {
            progress = true;
            self.run_command(now, i, cmd);
        }
        progress
    }

    fn run_command(&mut self, now: SimTime, i: usize, cmd: ProviderCommand) {
        match cmd {
            ProviderCommand::DhtPut { key, value, ttl_secs } => {
                let Some(public) = &mut self.public else { return };
                match public.dht.put(now, &mut public.node, key, value, ttl_secs) {
                    Ok(req) => {
                        public.dht_owner.insert(req, i);
                    }
                    Err(_) => {
                        let p = &mut self.privates[i];
                        p.session.handle_provider_input(now, &mut p.node, ProviderInput::DhtPutDone { ok: false });
                    }
                }
            }
            ProviderCommand::DhtGet { key } => {
                let Some(public) = &mut self.public else { return };
                let req = public.dht.get(now, &mut public.node, key);
                public.dht_owner.insert(req, i);
            }
            ProviderCommand::PresenceBind { resource } => {
                if let Some(x) = &mut self.xmpp {
                    x.bind(now, &resource);
                }
            }
            ProviderCommand::SendIq { to, payload } => {
                if let Some(x) = &mut self.xmpp {
                    x.send_iq(now, &to, payload);
                }
            }
        }
    }

    fn presence_owner(&self) -> Option<usize> {
        self.privates.iter().position(|p| p.session.provider().kind() == ProviderKind::Presence)
    }

    fn pump_clients(&mut self, now: SimTime, net: &mut Network) -> bool {
        let mut progress = false;
        let mut out = Vec::new();
        if let Some(s) = &mut self.stun {
            while let Some((ep, bytes)) = s.poll_transmit() {
                out.push((OVERLAY_PORT, ep, bytes));
            }
        }
        let mut events = Vec::new();
        if let Some(x) = &mut self.xmpp {
            let server = x.server();
            while let Some(bytes) = x.poll_transmit() {
                out.push((XMPP_CLIENT_PORT, server, bytes));
            }
            while let Some(ev) = x.poll_event() {
                events.push(ev);
            }
        }
        progress |= !out.is_empty() || !events.is_empty();
        for (port, ep, bytes) in out {
            self.send(net, port, ep, bytes);
        }
        let Some(owner) = self.presence_owner() else { return progress };
        for ev in events {
            let input = match ev {
                XmppEvent::Bound { jid } => ProviderInput::Bound { jid },
                XmppEvent::BindFailed { .. } => continue,
                XmppEvent::Presence { jid, online } => ProviderInput::Presence { jid, online },
                XmppEvent::IqError { to } => ProviderInput::IqError { to },
                XmppEvent::Iq { from, payload } => {
                    if payload.first() == Some(&iq::OVERLAY_FRAME) {
                        if let Some(addr) = xmpp_address(&from) {
                            self.privates[owner].node.handle_relay(now, addr, &payload[1..]);
                        }
                        continue;
                    }
                    ProviderInput::Iq { from, payload }
                }
            };
            let p = &mut self.privates[owner];
            p.session.handle_provider_input(now, &mut p.node, input);
        }
        progress
    }

    /// Relay address every private instance on this host advertises, if any.
    pub fn relay_address(&self) -> Option<TransportAddress> {
        self.public.as_ref().map(|p| subring_address(p.node.id()))
    }
}
