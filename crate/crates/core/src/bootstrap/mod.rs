//! Per-peer bootstrap of private overlays: the phase-driving session, the
//! host that shares one socket between overlays, and the simulated world.

mod host;
mod session;
mod world;

pub use host::{AppDelivery, HostCounters, PeerHost, PrivateInstance, PublicInstance, AUDIT_TAG, OVERLAY_PORT};
pub use session::{BootstrapSession, PeerState, Phase, PhaseTimes, ProbeResult, SessionConfig};
pub use world::{FederationHost, ProviderSetup, Role, World};
