use std::collections::VecDeque;
use std::time::Duration;

use crate::identifiers::{NodeId, TransportAddress};
use crate::simnet::SimTime;

use super::addrlist::{decode_addresses, encode_addresses};
use super::provider::{ProviderCommand, ProviderEvent, ProviderInput, ProviderKind, RendezvousProvider};

#[derive(Clone, Debug)]
pub struct DhtProviderConfig {
    pub ttl_secs: u32,
    pub query_period: Duration,
}

impl Default for DhtProviderConfig {
    fn default() -> Self {
        DhtProviderConfig { ttl_secs: 60, query_period: Duration::from_secs(5) }
    }
}

/// Announces under the namespace key and polls it.
///
/// The announcement is re-put every `ttl/2`; a failed put is retried at the
/// next query tick. Results arrive as full snapshots of the key.
pub struct DhtProvider {
    key: NodeId,
    config: DhtProviderConfig,
    ready: bool,
    value: Option<Vec<u8>>,
    next_put: Option<SimTime>,
    next_query: Option<SimTime>,
    last_put: Option<SimTime>,
    put_inflight: bool,
    get_inflight: bool,
    commands: VecDeque<ProviderCommand>,
    events: VecDeque<ProviderEvent>,
    puts: u64,
    gets: u64,
}

impl DhtProvider {
    pub fn new(key: NodeId, config: DhtProviderConfig) -> Self {
        DhtProvider {
            key,
            config,
            ready: false,
            value: None,
            next_put: None,
            next_query: None,
            last_put: None,
            put_inflight: false,
            get_inflight: false,
            commands: VecDeque::new(),
            events: VecDeque::new(),
            puts: 0,
            gets: 0,
        }
    }

    pub fn puts(&self) -> u64 {
        self.puts
    }

    pub fn gets(&self) -> u64 {
        self.gets
    }

    fn refresh_period(&self) -> Duration {
        Duration::from_secs(self.config.ttl_secs as u64) / 2
    }

    fn put(&mut self, now: SimTime) {
        let Some(value) = self.value.clone() else { return };
        if self.put_inflight {
            self.next_put = Some(now + self.config.query_period);
            return;
        }
        self.put_inflight = true;
        self.last_put = Some(now);
        self.puts += 1;
        self.next_put = Some(now + self.refresh_period());
        self.commands.push_back(ProviderCommand::DhtPut { key: self.key, value, ttl_secs: self.config.ttl_secs });
    }

    fn query(&mut self, now: SimTime) {
        self.next_query = Some(now + self.config.query_period);
        if !self.get_inflight {
            self.get_inflight = true;
            self.gets += 1;
            self.commands.push_back(ProviderCommand::DhtGet { key: self.key });
        }
    }
}

impl RendezvousProvider for DhtProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Dht
    }

    fn start(&mut self, _now: SimTime) {}

    fn announce(&mut self, now: SimTime, addresses: Vec<TransportAddress>) {
        let value = encode_addresses(&addresses);
        if self.value.as_ref() == Some(&value) {
            return;
        }
        self.value = Some(value);
        if !self.ready {
            return;
        }
        // address changes are put at most once per query period
        match self.last_put {
            Some(t) if now.saturating_since(t) < self.config.query_period => {
                let at = t + self.config.query_period;
                self.next_put = Some(self.next_put.map_or(at, |n| n.min(at)));
            }
            _ => self.put(now),
        }
    }

    fn set_connected(&mut self, _now: SimTime, _connected: bool) {}

    fn handle_input(&mut self, now: SimTime, input: ProviderInput) {
        match input {
            ProviderInput::SubstrateReady if !self.ready => {
                self.ready = true;
                self.put(now);
                self.query(now);
            }
            ProviderInput::DhtPutDone { ok } => {
                self.put_inflight = false;
                if !ok {
                    self.next_put = Some(now + self.config.query_period);
                }
            }
            ProviderInput::DhtGetDone { values, determinate } => {
                self.get_inflight = false;
                if determinate {
                    let own = self.value.as_ref();
                    let lists = values.iter().filter(|v| Some(*v) != own).filter_map(|v| decode_addresses(v).ok()).collect();
                    self.events.push_back(ProviderEvent::Snapshot(lists));
                }
            }
            _ => {}
        }
    }

    fn handle_timeout(&mut self, now: SimTime) {
        if self.next_put.is_some_and(|t| t <= now) {
            self.put(now);
        }
        if self.next_query.is_some_and(|t| t <= now) {
            self.query(now);
        }
    }

    fn poll_timeout(&self) -> Option<SimTime> {
        self.next_put.into_iter().chain(self.next_query).min()
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

    fn addr(n: u128) -> TransportAddress {
        TransportAddress::brunet(NodeId::from_u128(n))
    }

    #[test]
    fn waits_for_substrate_then_puts_and_refreshes_at_half_ttl() {
        let mut p = DhtProvider::new(NodeId::from_u128(5), DhtProviderConfig::default());
        p.announce(SimTime::ZERO, vec![addr(1)]);
        assert_eq!(p.poll_command(), None);
        p.handle_input(SimTime::from_secs(1), ProviderInput::SubstrateReady);
        assert!(matches!(p.poll_command(), Some(ProviderCommand::DhtPut { ttl_secs: 60, .. })));
        assert!(matches!(p.poll_command(), Some(ProviderCommand::DhtGet { .. })));
        p.handle_input(SimTime::from_secs(1), ProviderInput::DhtPutDone { ok: true });
        p.handle_input(SimTime::from_secs(1), ProviderInput::DhtGetDone { values: vec![], determinate: true });
        let mut t = SimTime::from_secs(1);
        let mut put_times = vec![];
        while t < SimTime::from_secs(70) {
            t = p.poll_timeout().unwrap();
            p.handle_timeout(t);
            while let Some(c) = p.poll_command() {
                match c {
                    ProviderCommand::DhtPut { .. } => {
                        put_times.push(t);
                        p.handle_input(t, ProviderInput::DhtPutDone { ok: true });
                    }
                    _ => p.handle_input(t, ProviderInput::DhtGetDone { values: vec![], determinate: true }),
                }
            }
        }
        assert_eq!(put_times, vec![SimTime::from_secs(31), SimTime::from_secs(61)]);
    }

    #[test]
    fn own_value_filtered_from_results() {
        let mut p = DhtProvider::new(NodeId::from_u128(5), DhtProviderConfig::default());
        p.handle_input(SimTime::ZERO, ProviderInput::SubstrateReady);
        p.announce(SimTime::ZERO, vec![addr(1)]);
        let values = vec![encode_addresses(&[addr(1)]), encode_addresses(&[addr(2)]), vec![0xff]];
        p.handle_input(SimTime::ZERO, ProviderInput::DhtGetDone { values, determinate: true });
        assert_eq!(p.poll_event(), Some(ProviderEvent::Snapshot(vec![vec![addr(2)]])));
        p.handle_input(SimTime::ZERO, ProviderInput::DhtGetDone { values: vec![], determinate: false });
        assert_eq!(p.poll_event(), None);
    }
}
