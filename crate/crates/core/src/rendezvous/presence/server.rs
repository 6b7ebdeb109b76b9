use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::simnet::{Endpoint, SimTime};

use super::wire::{bare_jid, split_jid, Frame, MAX_JID_BYTES};

pub const XMPP_SERVER_PORT: u16 = 5222;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FederationStats {
    pub presence_sent: u64,
    pub presence_dropped: u64,
    pub iq_delivered: u64,
    pub iq_errors: u64,
    pub s2s_frames: u64,
}

#[derive(Clone, Debug)]
struct Session {
    endpoint: Endpoint,
    last_heard: SimTime,
}

/// One presence domain: accounts, rosters, bound sessions, and links to the
/// other domains' servers.
pub struct FederationServer {
    domain: String,
    accounts: BTreeSet<String>,
    rosters: BTreeMap<String, BTreeSet<String>>,
    peers: BTreeMap<String, Endpoint>,
    sessions: BTreeMap<String, Session>,
    by_endpoint: BTreeMap<Endpoint, String>,
    session_timeout: Duration,
    sweep_period: Duration,
    next_sweep: SimTime,
    presence_drop: f64,
    rng: ChaCha8Rng,
    out: VecDeque<(Endpoint, Vec<u8>)>,
    stats: FederationStats,
}

impl FederationServer {
    pub fn new(domain: &str, seed: u64) -> Self {
        FederationServer {
            domain: domain.to_string(),
            accounts: BTreeSet::new(),
            rosters: BTreeMap::new(),
            peers: BTreeMap::new(),
            sessions: BTreeMap::new(),
            by_endpoint: BTreeMap::new(),
            session_timeout: Duration::from_secs(90),
            sweep_period: Duration::from_secs(10),
            next_sweep: SimTime::ZERO,
            presence_drop: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            out: VecDeque::new(),
            stats: FederationStats::default(),
        }
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn stats(&self) -> FederationStats {
        self.stats
    }

    /// Fraction of presence notifications silently dropped.
    pub fn set_presence_drop(&mut self, p: f64) {
        self.presence_drop = p.clamp(0.0, 1.0);
    }

    /// Returns the bare account id.
    pub fn add_account(&mut self, user: &str) -> String {
        let bare = format!("{user}@{}", self.domain);
        self.accounts.insert(bare.clone());
        bare
    }

    /// Records that local account `owner` is subscribed to `contact`, either domain.
    pub fn subscribe(&mut self, owner: &str, contact: &str) {
        if owner != contact {
            self.rosters.entry(owner.to_string()).or_default().insert(contact.to_string());
        }
    }

    pub fn add_peer(&mut self, domain: &str, server: Endpoint) {
        self.peers.insert(domain.to_string(), server);
    }

    pub fn online(&self) -> impl Iterator<Item = &str> {
        self.sessions.keys().map(String::as_str)
    }

    fn is_local(&self, jid: &str) -> bool {
        split_jid(jid).is_some_and(|(_, d, _)| d == self.domain)
    }

    fn subscribed(&self, owner_bare: &str, contact_bare: &str) -> bool {
        owner_bare == contact_bare || self.rosters.get(owner_bare).is_some_and(|r| r.contains(contact_bare))
    }

    fn send(&mut self, to: Endpoint, frame: Frame) {
        self.out.push_back((to, frame.encode()));
    }

    fn send_s2s(&mut self, domain_of: &str, frame: Frame) {
        let Some((_, domain, _)) = split_jid(domain_of) else { return };
        if let Some(&ep) = self.peers.get(domain) {
            self.stats.s2s_frames += 1;
            self.send(ep, frame);
        }
    }

    fn sessions_of(&self, bare: &str) -> Vec<(String, Endpoint)> {
        self.sessions
            .iter()
            .filter(|(full, _)| bare_jid(full) == bare)
            .map(|(full, s)| (full.clone(), s.endpoint))
            .collect()
    }

    fn push_presence(&mut self, to: Endpoint, from: &str, online: bool) {
        if self.presence_drop > 0.0 && self.rng.random_bool(self.presence_drop) {
            self.stats.presence_dropped += 1;
            return;
        }
        self.stats.presence_sent += 1;
        self.send(to, Frame::Presence { from: from.to_string(), online });
    }

    /// Delivers `from`'s presence to a bare or full `to`.
    fn deliver_presence(&mut self, from: &str, to: &str, online: bool) {
        if !self.is_local(to) {
            self.send_s2s(to, Frame::S2sPresence { from: from.to_string(), to: to.to_string(), online });
            return;
        }
        if !self.subscribed(bare_jid(to), bare_jid(from)) {
            return;
        }
        let targets: Vec<(String, Endpoint)> = if to.contains('/') {
            self.sessions.get(to).map(|s| (to.to_string(), s.endpoint)).into_iter().collect()
        } else {
            self.sessions_of(to)
        };
        for (full, ep) in targets {
            if full != from {
                self.push_presence(ep, from, online);
            }
        }
    }

    fn contacts(&self, bare: &str) -> Vec<String> {
        let mut c: Vec<String> = self.rosters.get(bare).map(|r| r.iter().cloned().collect()).unwrap_or_default();
        c.push(bare.to_string());
        c
    }

    fn broadcast(&mut self, full: &str, online: bool) {
        for contact in self.contacts(bare_jid(full)) {
            self.deliver_presence(full, &contact, online);
        }
    }

    fn drop_session(&mut self, full: &str) {
        if let Some(s) = self.sessions.remove(full) {
            self.by_endpoint.remove(&s.endpoint);
            self.broadcast(full, false);
        }
    }

    pub fn handle(&mut self, now: SimTime, from: Endpoint, bytes: &[u8]) {
        let Ok(frame) = Frame::decode(bytes) else { return };
        if let Some(full) = self.by_endpoint.get(&from).cloned() {
            if let Some(s) = self.sessions.get_mut(&full) {
                s.last_heard = now;
            }
        }
        match frame {
            Frame::Bind { account, resource } => self.bind(now, from, account, resource),
            Frame::KeepAlive => {}
            Frame::Unbind => {
                if let Some(full) = self.by_endpoint.get(&from).cloned() {
                    self.drop_session(&full);
                }
            }
            Frame::ClientIq { id, to, payload } => {
                let Some(sender) = self.by_endpoint.get(&from).cloned() else { return };
                if self.is_local(&to) {
                    match self.sessions.get(&to).map(|s| s.endpoint) {
                        Some(ep) => {
                            self.stats.iq_delivered += 1;
                            self.send(ep, Frame::Iq { id, from: sender, payload });
                        }
                        None => {
                            self.stats.iq_errors += 1;
                            self.send(from, Frame::IqError { id, to });
                        }
                    }
                } else {
                    self.send_s2s(&to.clone(), Frame::S2sIq { id, from: sender, to, payload });
                }
            }
            Frame::S2sPresence { from: who, to, online } => self.deliver_presence(&who, &to, online),
            Frame::S2sProbe { from: who, to } => {
                if self.is_local(&to) && self.subscribed(&to, bare_jid(&who)) {
                    for (full, _) in self.sessions_of(&to) {
                        self.send_s2s(&who.clone(), Frame::S2sPresence { from: full, to: who.clone(), online: true });
                    }
                }
            }
            Frame::S2sIq { id, from: who, to, payload } => match self.sessions.get(&to).map(|s| s.endpoint) {
                Some(ep) => {
                    self.stats.iq_delivered += 1;
                    self.send(ep, Frame::Iq { id, from: who, payload });
                }
                None => {
                    self.stats.iq_errors += 1;
                    self.send_s2s(&who.clone(), Frame::S2sIqError { id, from: who, to });
                }
            },
            Frame::S2sIqError { id, from: who, to } => {
                if let Some(ep) = self.sessions.get(&who).map(|s| s.endpoint) {
                    self.send(ep, Frame::IqError { id, to });
                }
            }
            _ => {}
        }
    }

    fn bind(&mut self, now: SimTime, from: Endpoint, account: String, resource: String) {
        let full = format!("{account}/{resource}");
        if !self.accounts.contains(&account) {
            self.send(from, Frame::BindError { reason: format!("unknown account {account}") });
            return;
        }
        if full.len() > MAX_JID_BYTES || resource.is_empty() {
            self.send(from, Frame::BindError { reason: "identifier longer than 1023 bytes".into() });
            return;
        }
        if let Some(s) = self.sessions.get_mut(&full) {
            // a repeated bind from a client that missed Bound
            s.last_heard = now;
            self.send(from, Frame::Bound { jid: full });
            return;
        }
        if let Some(old) = self.by_endpoint.get(&from).cloned() {
            self.drop_session(&old);
        }
        self.sessions.insert(full.clone(), Session { endpoint: from, last_heard: now });
        self.by_endpoint.insert(from, full.clone());
        self.send(from, Frame::Bound { jid: full.clone() });
        self.broadcast(&full, true);
        for contact in self.contacts(&account) {
            if self.is_local(&contact) {
                if !self.subscribed(&account, &contact) {
                    continue;
                }
                for (other, _) in self.sessions_of(&contact) {
                    if other != full {
                        self.push_presence(from, &other, true);
                    }
                }
            } else {
                self.send_s2s(&contact.clone(), Frame::S2sProbe { from: full.clone(), to: contact });
            }
        }
    }

    pub fn handle_timeout(&mut self, now: SimTime) {
        if now < self.next_sweep {
            return;
        }
        self.next_sweep = now + self.sweep_period;
        let timeout = self.session_timeout;
        let stale: Vec<String> = self
            .sessions
            .iter()
            .filter(|(_, s)| now.saturating_since(s.last_heard) >= timeout)
            .map(|(f, _)| f.clone())
            .collect();
        for full in stale {
            self.drop_session(&full);
        }
    }

    pub fn poll_timeout(&self) -> Option<SimTime> {
        (!self.sessions.is_empty()).then_some(self.next_sweep)
    }

    pub fn poll_transmit(&mut self) -> Option<(Endpoint, Vec<u8>)> {
        self.out.pop_front()
    }
}
