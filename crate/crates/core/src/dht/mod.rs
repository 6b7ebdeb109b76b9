//! Multi-value soft-state key/value storage over the overlay.

mod node;
mod rpc;
mod store;

pub use node::{DhtConfig, DhtEvent, DhtNode, RequestId};
pub use rpc::DhtRpc;
pub use store::{LeaseEntry, LeaseStore, MAX_TTL_SECS, MAX_VALUE_BYTES, MIN_TTL_SECS};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DhtError {
    #[error("ttl {0} s outside 1..=3600")]
    TtlOutOfRange(u32),
    #[error("value of {0} bytes exceeds the 1024-byte cap")]
    ValueTooLarge(usize),
}
