//! DHT rpc layouts, carried in closest-mode routed packets; replies go back exact.
//!
//! ```text
//! Put      0x01 req:u64 reply_via:opt-id key ttl:u32 value:bytes16
//! Get      0x02 req:u64 reply_via:opt-id key
//! PutAck   0x03 req:u64 key stored:u8
//! GetReply 0x04 req:u64 key count:u16 (value:bytes16)*
//! ```
//!
//! The origin is the routed packet's source.

use crate::codec::{DecodeError, Reader, Writer};
use crate::identifiers::NodeId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DhtRpc {
    Put { req: u64, reply_via: Option<NodeId>, key: NodeId, ttl: u32, value: Vec<u8> },
    Get { req: u64, reply_via: Option<NodeId>, key: NodeId },
    PutAck { req: u64, key: NodeId, stored: bool },
    GetReply { req: u64, key: NodeId, values: Vec<Vec<u8>> },
}

/// Replies stay well inside one datagram.
const MAX_REPLY_BYTES: usize = 48 * 1024;

impl DhtRpc {
    pub fn req(&self) -> u64 {
        match self {
            DhtRpc::Put { req, .. } | DhtRpc::Get { req, .. } | DhtRpc::PutAck { req, .. } | DhtRpc::GetReply { req, .. } => {
                *req
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            DhtRpc::Put { req, reply_via, key, ttl, value } => {
                Writer::with_tag(0x01).u64(*req).opt_node_id(*reply_via).node_id(*key).u32(*ttl).bytes16(value).finish()
            }
            DhtRpc::Get { req, reply_via, key } => {
                Writer::with_tag(0x02).u64(*req).opt_node_id(*reply_via).node_id(*key).finish()
            }
            DhtRpc::PutAck { req, key, stored } => Writer::with_tag(0x03).u64(*req).node_id(*key).bool(*stored).finish(),
            DhtRpc::GetReply { req, key, values } => {
                let mut used = 0;
                let fit: Vec<&Vec<u8>> = values
                    .iter()
                    .take_while(|v| {
                        used += v.len() + 2;
                        used <= MAX_REPLY_BYTES
                    })
                    .collect();
                let mut w = Writer::with_tag(0x04);
                w.u64(*req).node_id(*key).u16(fit.len() as u16);
                for v in fit {
                    w.bytes16(v);
                }
                w.finish()
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let rpc = match r.u8()? {
            0x01 => DhtRpc::Put {
                req: r.u64()?,
                reply_via: r.opt_node_id()?,
                key: r.node_id()?,
                ttl: r.u32()?,
                value: r.bytes16()?.to_vec(),
            },
            0x02 => DhtRpc::Get { req: r.u64()?, reply_via: r.opt_node_id()?, key: r.node_id()? },
            0x03 => DhtRpc::PutAck { req: r.u64()?, key: r.node_id()?, stored: r.bool()? },
            0x04 => {
                let req = r.u64()?;
                let key = r.node_id()?;
                let n = r.u16()?;
                let values = (0..n).map(|_| r.bytes16().map(<[u8]>::to_vec)).collect::<Result<_, _>>()?;
                DhtRpc::GetReply { req, key, values }
            }
            t => return Err(DecodeError::UnknownTag(t)),
        };
        r.finish()?;
        Ok(rpc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_rpc() -> impl Strategy<Value = DhtRpc> {
        let id = any::<u128>().prop_map(NodeId::from_u128);
        let val = proptest::collection::vec(any::<u8>(), 0..64);
        prop_oneof![
            (any::<u64>(), proptest::option::of(id.clone()), id.clone(), any::<u32>(), val.clone())
                .prop_map(|(req, reply_via, key, ttl, value)| DhtRpc::Put { req, reply_via, key, ttl, value }),
            (any::<u64>(), proptest::option::of(id.clone()), id.clone())
                .prop_map(|(req, reply_via, key)| DhtRpc::Get { req, reply_via, key }),
            (any::<u64>(), id.clone(), any::<bool>()).prop_map(|(req, key, stored)| DhtRpc::PutAck { req, key, stored }),
            (any::<u64>(), id, proptest::collection::vec(val, 0..5))
                .prop_map(|(req, key, values)| DhtRpc::GetReply { req, key, values }),
        ]
    }

    proptest! {
        #[test]
        fn round_trip(rpc in arb_rpc()) {
            prop_assert_eq!(DhtRpc::decode(&rpc.encode()).unwrap(), rpc);
        }

        #[test]
        fn garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..80)) {
            let _ = DhtRpc::decode(&bytes);
        }
    }

    #[test]
    fn get_layout_is_fixed() {
        let bytes = DhtRpc::Get { req: 1, reply_via: None, key: NodeId::from_u128(2) }.encode();
        assert_eq!(bytes.len(), 1 + 8 + 1 + 20);
        assert_eq!(bytes[0], 0x02);
        assert_eq!(&bytes[1..9], &[0, 0, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn oversized_reply_is_truncated_to_whole_values() {
        let values = vec![vec![7u8; 1024]; 100];
        let bytes = DhtRpc::GetReply { req: 1, key: NodeId::ZERO, values }.encode();
        let DhtRpc::GetReply { values, .. } = DhtRpc::decode(&bytes).unwrap() else { panic!() };
        assert_eq!(values.len(), MAX_REPLY_BYTES / 1026);
    }
}
