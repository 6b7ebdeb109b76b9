use serde::{Deserialize, Serialize};

use crate::identifiers::{NodeId, TransportAddress};
use crate::simnet::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Dht,
    Presence,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Dht => "dht",
            ProviderKind::Presence => "presence",
        }
    }
}

/// Work a provider asks its host to do on the substrate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProviderCommand {
    DhtPut { key: NodeId, value: Vec<u8>, ttl_secs: u32 },
    DhtGet { key: NodeId },
    PresenceBind { resource: String },
    SendIq { to: String, payload: Vec<u8> },
}

/// Substrate results and notifications fed back to the provider.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProviderInput {
    /// The public overlay joined, or the presence session came up.
    SubstrateReady,
    DhtPutDone { ok: bool },
    DhtGetDone { values: Vec<Vec<u8>>, determinate: bool },
    Bound { jid: String },
    Presence { jid: String, online: bool },
    Iq { from: String, payload: Vec<u8> },
    IqError { to: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProviderEvent {
    /// Every address list currently stored for the namespace.
    Snapshot(Vec<Vec<TransportAddress>>),
    /// Newly seen peers; earlier ones stay known until they depart.
    Discovered(Vec<Vec<TransportAddress>>),
    /// A peer answered an address request.
    AddressReply(Vec<TransportAddress>),
    /// A peer's relay address went offline.
    Departed(TransportAddress),
    /// Our own relay address on this substrate.
    RelayAddress(TransportAddress),
}

/// Rendezvous for one namespace, as a sans-IO state machine.
///
/// The host drains [`poll_command`](Self::poll_command), executes each on the
/// substrate, and feeds results back through [`handle_input`](Self::handle_input).
pub trait RendezvousProvider {
    fn kind(&self) -> ProviderKind;
    fn start(&mut self, now: SimTime);
    /// Sets the advertised address list; repeating the same list is a no-op.
    fn announce(&mut self, now: SimTime, addresses: Vec<TransportAddress>);
    /// Connected sessions stop soliciting addresses.
    fn set_connected(&mut self, now: SimTime, connected: bool);
    fn handle_input(&mut self, now: SimTime, input: ProviderInput);
    fn handle_timeout(&mut self, now: SimTime);
    fn poll_timeout(&self) -> Option<SimTime>;
    fn poll_command(&mut self) -> Option<ProviderCommand>;
    fn poll_event(&mut self) -> Option<ProviderEvent>;
    /// Send time of every address request, one entry per recipient.
    fn request_log(&self) -> &[SimTime] {
        &[]
    }
}
