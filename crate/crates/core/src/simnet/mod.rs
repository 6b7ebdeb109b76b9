//! Deterministic discrete-event datagram network with NAT devices.

mod nat;
mod network;
mod time;
mod trace;

pub use nat::{InboundVerdict, NatBinding, NatDevice, NatType, Permit, FIRST_EXTERNAL_PORT};
pub use network::{
    Attachment, DatagramFrame, DropReason, Endpoint, HostId, NatId, NetConfig, NetEvent, Network, NetworkId,
    TrafficStats, MAX_DATAGRAM,
};
pub use time::SimTime;
pub use trace::{Trace, TraceRecord};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("{0} address pool exhausted")]
    AddressPoolExhausted(&'static str),
    #[error("unknown host {0:?}")]
    UnknownHost(HostId),
    #[error("unknown NAT device {0:?}")]
    UnknownNat(NatId),
    #[error("port 0 cannot be bound")]
    InvalidPort,
    #[error("port {0} already bound")]
    PortInUse(u16),
    #[error("source port {0} is not bound")]
    UnboundPort(u16),
    #[error("payload of {0} bytes exceeds the datagram limit")]
    PayloadTooLarge(usize),
}
