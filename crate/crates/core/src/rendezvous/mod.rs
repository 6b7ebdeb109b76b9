//! Rendezvous and reflection providers: DHT-based, presence-based, and a
//! STUN-style binding service.

pub mod addrlist;
mod dht_provider;
pub mod presence;
mod provider;
pub mod stun;

pub use dht_provider::{DhtProvider, DhtProviderConfig};
pub use provider::{ProviderCommand, ProviderEvent, ProviderInput, ProviderKind, RendezvousProvider};
