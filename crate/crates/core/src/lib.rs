//! Bootstrapping private ring overlays from a public one, over a simulated NATed network.

pub mod bootstrap;
pub mod codec;
pub mod dht;
pub mod identifiers;
pub mod overlay;
pub mod rendezvous;
pub mod report;
pub mod scenario;
pub mod simnet;
pub mod transports;
