use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::identifiers::{NodeId, TransportAddress};
use crate::rendezvous::addrlist::{decode_addresses, encode_addresses};
use crate::rendezvous::provider::{ProviderCommand, ProviderEvent, ProviderInput, ProviderKind, RendezvousProvider};
use crate::simnet::SimTime;

use super::wire::{iq, split_jid};

#[derive(Clone, Debug)]
pub struct PresenceProviderConfig {
    pub request_period: Duration,
    pub request_fanout: usize,
}

impl Default for PresenceProviderConfig {
    fn default() -> Self {
        PresenceProviderConfig { request_period: Duration::from_secs(10), request_fanout: 10 }
    }
}

/// `hex(namespace key) "." hex(8 random bytes)`.
pub fn presence_resource(namespace: NodeId, nonce: [u8; 8]) -> String {
    format!("{}.{}", hex::encode(namespace.to_bytes()), hex::encode(nonce))
}

/// True when `jid`'s resource advertises `namespace`.
pub fn resource_matches(jid: &str, namespace: NodeId) -> bool {
    let Some((_, _, Some(resource))) = split_jid(jid) else { return false };
    match resource.split_once('.') {
        Some((hash, nonce)) => hash == hex::encode(namespace.to_bytes()) && !nonce.is_empty(),
        None => false,
    }
}

pub fn xmpp_address(jid: &str) -> Option<TransportAddress> {
    let (user, domain, resource) = split_jid(jid)?;
    TransportAddress::xmpp(user, domain, resource?).ok()
}

/// Rendezvous through presence: the namespace rides in the resource, peers
/// come from presence notifications, and addresses from IQ requests.
pub struct PresenceProvider {
    namespace: NodeId,
    config: PresenceProviderConfig,
    resource: String,
    jid: Option<String>,
    addresses: Vec<TransportAddress>,
    connected: bool,
    known: BTreeMap<String, ()>,
    next_round: Option<SimTime>,
    rng: ChaCha8Rng,
    requests: Vec<SimTime>,
    commands: VecDeque<ProviderCommand>,
    events: VecDeque<ProviderEvent>,
}

impl PresenceProvider {
    pub fn new(namespace: NodeId, config: PresenceProviderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let resource = presence_resource(namespace, rng.random());
        PresenceProvider {
            namespace,
            config,
            resource,
            jid: None,
            addresses: Vec::new(),
            connected: false,
            known: BTreeMap::new(),
            next_round: None,
            rng,
            requests: Vec::new(),
            commands: VecDeque::new(),
            events: VecDeque::new(),
        }
    }

    pub fn resource(&self) -> &str {
        &self.resource
    }

    /// Full identifiers of matching peers currently believed online.
    pub fn known(&self) -> impl Iterator<Item = &str> {
        self.known.keys().map(String::as_str)
    }

    fn learn(&mut self, now: SimTime, jid: &str) {
        if Some(jid) == self.jid.as_deref() || !resource_matches(jid, self.namespace) {
            return;
        }
        if self.known.insert(jid.to_string(), ()).is_none() {
            if let Some(addr) = xmpp_address(jid) {
                self.events.push_back(ProviderEvent::Discovered(vec![vec![addr]]));
            }
            if self.next_round.is_none() && !self.connected {
                self.next_round = Some(now);
            }
        }
    }

    fn forget(&mut self, jid: &str) {
        if self.known.remove(jid).is_some() {
            if let Some(addr) = xmpp_address(jid) {
                self.events.push_back(ProviderEvent::Departed(addr));
            }
        }
    }

    fn round(&mut self, now: SimTime) {
        self.next_round = None;
        if self.connected || self.known.is_empty() {
            return;
        }
        let all: Vec<String> = self.known.keys().cloned().collect();
        let picked: Vec<String> = all.choose_multiple(&mut self.rng, self.config.request_fanout).cloned().collect();
        for to in picked {
            self.requests.push(now);
            self.commands.push_back(ProviderCommand::SendIq { to, payload: vec![iq::ADDRESS_REQUEST] });
        }
        self.next_round = Some(now + self.config.request_period);
    }
}

impl RendezvousProvider for PresenceProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Presence
    }

    fn request_log(&self) -> &[SimTime] {
        &self.requests
    }

    fn start(&mut self, _now: SimTime) {
        self.commands.push_back(ProviderCommand::PresenceBind { resource: self.resource.clone() });
    }

    fn announce(&mut self, _now: SimTime, addresses: Vec<TransportAddress>) {
        self.addresses = addresses;
    }

    fn set_connected(&mut self, now: SimTime, connected: bool) {
        self.connected = connected;
        if connected {
            self.next_round = None;
        } else if self.next_round.is_none() && !self.known.is_empty() {
            self.next_round = Some(now);
        }
    }

    fn handle_input(&mut self, now: SimTime, input: ProviderInput) {
        match input {
            ProviderInput::Bound { jid } => {
                if let Some(addr) = xmpp_address(&jid) {
                    self.events.push_back(ProviderEvent::RelayAddress(addr));
                }
                self.jid = Some(jid);
            }
            ProviderInput::Presence { jid, online: true } => self.learn(now, &jid),
            ProviderInput::Presence { jid, online: false } => self.forget(&jid),
            ProviderInput::IqError { to } => self.forget(&to),
            ProviderInput::Iq { from, payload } => match payload.split_first() {
                Some((&iq::ADDRESS_REQUEST, [])) => {
                    self.learn(now, &from);
                    if resource_matches(&from, self.namespace) {
                        let mut reply = vec![iq::ADDRESS_REPLY];
                        reply.extend(encode_addresses(&self.addresses));
                        self.commands.push_back(ProviderCommand::SendIq { to: from, payload: reply });
                    }
                }
                Some((&iq::ADDRESS_REPLY, rest)) => {
                    if let Ok(list) = decode_addresses(rest) {
                        self.learn(now, &from);
                        self.events.push_back(ProviderEvent::AddressReply(list));
                    }
                }
                _ => {}
            },
            _ => {}
        }
    }

    fn handle_timeout(&mut self, now: SimTime) {
        if self.next_round.is_some_and(|t| t <= now) {
            self.round(now);
        }
    }

    fn poll_timeout(&self) -> Option<SimTime> {
        self.next_round
    }

    fn poll_command(&mut self) -> Option<ProviderCommand> {
        self.commands.pop_front()
    }

    fn poll_event(&mut self) -> Option<ProviderEvent> {
        self.events.pop_front()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ns() -> NodeId {
        NodeId::from_u128(0x5eed)
    }

    fn peer(i: usize) -> String {
        format!("u{i}@a.example/{}", presence_resource(ns(), [i as u8; 8]))
    }

    fn sent_requests(p: &mut PresenceProvider) -> usize {
        std::iter::from_fn(|| p.poll_command()).filter(|c| matches!(c, ProviderCommand::SendIq { .. })).count()
    }

    #[test]
    fn resource_format_and_matching() {
        let r = presence_resource(ns(), [0xab; 8]);
        assert_eq!(r.len(), 40 + 1 + 16);
        assert!(resource_matches(&format!("a@b/{r}"), ns()));
        assert!(!resource_matches(&format!("a@b/{r}"), NodeId::from_u128(1)));
        assert!(!resource_matches("a@b/plain", ns()));
    }

    #[test]
    fn three_peers_all_asked_in_first_round() {
        let mut p = PresenceProvider::new(ns(), PresenceProviderConfig::default(), 1);
        for i in 0..3 {
            p.handle_input(SimTime::ZERO, ProviderInput::Presence { jid: peer(i), online: true });
        }
        p.handle_timeout(SimTime::ZERO);
        assert_eq!(sent_requests(&mut p), 3);
    }

    #[test]
    fn fanout_capped_per_round_and_stops_when_connected() {
        let mut p = PresenceProvider::new(ns(), PresenceProviderConfig::default(), 1);
        for i in 0..600 {
            p.handle_input(SimTime::ZERO, ProviderInput::Presence { jid: peer(i), online: true });
        }
        let mut t = SimTime::ZERO;
        for _ in 0..5 {
            t = p.poll_timeout().unwrap();
            p.handle_timeout(t);
            assert_eq!(sent_requests(&mut p), 10);
        }
        assert_eq!(t, SimTime::from_secs(40));
        p.set_connected(t, true);
        assert_eq!(p.poll_timeout(), None);
    }

    #[test]
    fn other_namespace_is_ignored() {
        let mut p = PresenceProvider::new(ns(), PresenceProviderConfig::default(), 1);
        let other = format!("x@a.example/{}", presence_resource(NodeId::from_u128(2), [1; 8]));
        p.handle_input(SimTime::ZERO, ProviderInput::Presence { jid: other, online: true });
        assert_eq!(p.known().count(), 0);
        assert_eq!(p.poll_event(), None);
    }

    #[test]
    fn request_answered_with_announced_addresses() {
        let mut p = PresenceProvider::new(ns(), PresenceProviderConfig::default(), 1);
        let list = vec![TransportAddress::udp([16, 0, 0, 1].into(), 1024, Some("p-1"))];
        p.announce(SimTime::ZERO, list.clone());
        p.handle_input(SimTime::ZERO, ProviderInput::Iq { from: peer(1), payload: vec![iq::ADDRESS_REQUEST] });
        let Some(ProviderCommand::SendIq { to, payload }) = p.poll_command() else { panic!() };
        assert_eq!(to, peer(1));
        assert_eq!(payload[0], iq::ADDRESS_REPLY);
        assert_eq!(decode_addresses(&payload[1..]).unwrap(), list);
    }
}
