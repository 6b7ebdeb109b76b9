//! Presence-based rendezvous over a simulated server federation.

mod client;
mod provider;
mod server;
pub mod wire;

pub use client::{XmppClient, XmppEvent, XMPP_CLIENT_PORT};
pub use provider::{presence_resource, resource_matches, xmpp_address, PresenceProvider, PresenceProviderConfig};
pub use server::{FederationServer, FederationStats, XMPP_SERVER_PORT};
