//! Ring identifiers, transport-address URIs and namespace hashing.

mod address;
mod namespace;
mod node_id;

pub use address::{parse_address, Host, Scheme, TransportAddress, MAX_XMPP_ID_LEN};
pub use namespace::{hash_to_id, namespace_key, Namespace};
pub use node_id::{ring_distance, NodeId, U160, ID_BYTES};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AddressError {
    #[error("unknown address scheme in {0:?}")]
    UnknownScheme(String),
    #[error("malformed host {0:?}")]
    MalformedHost(String),
    #[error("malformed port {0:?}")]
    MalformedPort(String),
    #[error("address requires a non-zero port")]
    MissingPort,
    #[error("xmpp address requires a resource")]
    MissingResource,
    #[error("malformed node id {0:?}; expected 40 lowercase hex digits")]
    MalformedNodeId(String),
    #[error("xmpp identifier is {0} bytes, limit is 1023")]
    IdentifierTooLong(usize),
    #[error("service name must not be empty")]
    EmptyServiceName,
}
