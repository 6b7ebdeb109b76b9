//! Overlay frame layouts. All integers big-endian; ids are 20 raw bytes.
//!
//! ```text
//! Hello      0x01 src dst nonce:u64
//! HelloAck   0x02 src dst nonce:u64 observed:opt-endpoint
//! Confirm    0x03 src dst nonce:u64 observed:opt-endpoint
//! Ping       0x04 src dst nonce:u64
//! Pong       0x05 src dst nonce:u64
//! Close      0x06 src dst
//! Neighbors  0x07 src wants_you:u8 count:u8 (id flags:u8)*
//! Routed     0x10 src dst via:opt-id flags:u8 mode:u8 hops:u8 ttl:u8 proto:u8 len:u16 payload
//! ```
//!
//! `opt-x` is a one-byte presence flag followed by the value. An endpoint is
//! ipv4:u32 port:u16.

use crate::codec::{DecodeError, Reader, Writer};
use crate::identifiers::{NodeId, TransportAddress};
use crate::simnet::Endpoint;

pub const DEFAULT_TTL: u8 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DeliveryMode {
    /// Delivered only at the node whose id equals the destination.
    Exact,
    /// Delivered at the live node ring-closest to the destination.
    Closest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PayloadProtocol {
    DhtRpc = 1,
    ConnectToMe = 2,
    Subring = 3,
    TunnelControl = 4,
    App = 5,
}

impl PayloadProtocol {
    fn from_u8(v: u8) -> Result<Self, DecodeError> {
        Ok(match v {
            1 => PayloadProtocol::DhtRpc,
            2 => PayloadProtocol::ConnectToMe,
            3 => PayloadProtocol::Subring,
            4 => PayloadProtocol::TunnelControl,
            5 => PayloadProtocol::App,
            t => return Err(DecodeError::UnknownTag(t)),
        })
    }
}

/// A packet forwarded hop by hop toward `dst`.
///
/// With `via` set the packet first travels to that node (`via_reached` flips
/// there), then on to `dst`. `exclude_source` keeps the originator out of the
/// greedy choice, so a node can route to its own id and land on its nearest
/// other node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutedPacket {
    pub src: NodeId,
    pub dst: NodeId,
    pub via: Option<NodeId>,
    pub via_reached: bool,
    pub mode: DeliveryMode,
    pub exclude_source: bool,
    pub hops: u8,
    pub ttl: u8,
    pub proto: PayloadProtocol,
    pub payload: Vec<u8>,
}

impl RoutedPacket {
    pub fn new(src: NodeId, dst: NodeId, mode: DeliveryMode, proto: PayloadProtocol, payload: Vec<u8>) -> Self {
        RoutedPacket {
            src,
            dst,
            via: None,
            via_reached: false,
            mode,
            exclude_source: false,
            hops: 0,
            ttl: DEFAULT_TTL,
            proto,
            payload,
        }
    }

    pub fn with_via(mut self, via: Option<NodeId>) -> Self {
        self.via = via;
        self
    }
}

/// Per-neighbor flag in a [`Message::Neighbors`] list: the sender reaches it
/// without a tunnel, so it can serve as a tunnel forwarder.
pub const NEIGHBOR_FORWARDABLE: u8 = 0x01;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Hello { src: NodeId, dst: NodeId, nonce: u64 },
    HelloAck { src: NodeId, dst: NodeId, nonce: u64, observed: Option<Endpoint> },
    Confirm { src: NodeId, dst: NodeId, nonce: u64, observed: Option<Endpoint> },
    Ping { src: NodeId, dst: NodeId, nonce: u64 },
    Pong { src: NodeId, dst: NodeId, nonce: u64 },
    Close { src: NodeId, dst: NodeId },
    /// The sender's near set; `wants_you` says the receiver is in it.
    Neighbors { src: NodeId, wants_you: bool, near: Vec<(NodeId, u8)> },
    Routed(RoutedPacket),
}

impl Message {
    pub fn src(&self) -> NodeId {
        match self {
            Message::Hello { src, .. }
            | Message::HelloAck { src, .. }
            | Message::Confirm { src, .. }
            | Message::Ping { src, .. }
            | Message::Pong { src, .. }
            | Message::Close { src, .. }
            | Message::Neighbors { src, .. } => *src,
            Message::Routed(p) => p.src,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Message::Hello { src, dst, nonce } => Writer::with_tag(0x01).node_id(*src).node_id(*dst).u64(*nonce).finish(),
            Message::HelloAck { src, dst, nonce, observed } => Writer::with_tag(0x02)
                .node_id(*src)
                .node_id(*dst)
                .u64(*nonce)
                .opt_endpoint(*observed)
                .finish(),
            Message::Confirm { src, dst, nonce, observed } => Writer::with_tag(0x03)
                .node_id(*src)
                .node_id(*dst)
                .u64(*nonce)
                .opt_endpoint(*observed)
                .finish(),
            Message::Ping { src, dst, nonce } => Writer::with_tag(0x04).node_id(*src).node_id(*dst).u64(*nonce).finish(),
            Message::Pong { src, dst, nonce } => Writer::with_tag(0x05).node_id(*src).node_id(*dst).u64(*nonce).finish(),
            Message::Close { src, dst } => Writer::with_tag(0x06).node_id(*src).node_id(*dst).finish(),
            Message::Neighbors { src, wants_you, near } => {
                let mut w = Writer::with_tag(0x07);
                w.node_id(*src).bool(*wants_you).u8(near.len().min(255) as u8);
                for (id, flags) in near.iter().take(255) {
                    w.node_id(*id).u8(*flags);
                }
                w.finish()
            }
            Message::Routed(p) => {
                let flags = (p.exclude_source as u8) | ((p.via_reached as u8) << 1);
                Writer::with_tag(0x10)
                    .node_id(p.src)
                    .node_id(p.dst)
                    .opt_node_id(p.via)
                    .u8(flags)
                    .u8(match p.mode {
                        DeliveryMode::Exact => 0,
                        DeliveryMode::Closest => 1,
                    })
                    .u8(p.hops)
                    .u8(p.ttl)
                    .u8(p.proto as u8)
                    .bytes16(&p.payload)
                    .finish()
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
        let mut r = Reader::new(bytes);
        let msg = match r.u8()? {
            0x01 => Message::Hello { src: r.node_id()?, dst: r.node_id()?, nonce: r.u64()? },
            0x02 => Message::HelloAck { src: r.node_id()?, dst: r.node_id()?, nonce: r.u64()?, observed: r.opt_endpoint()? },
            0x03 => Message::Confirm { src: r.node_id()?, dst: r.node_id()?, nonce: r.u64()?, observed: r.opt_endpoint()? },
            0x04 => Message::Ping { src: r.node_id()?, dst: r.node_id()?, nonce: r.u64()? },
            0x05 => Message::Pong { src: r.node_id()?, dst: r.node_id()?, nonce: r.u64()? },
            0x06 => Message::Close { src: r.node_id()?, dst: r.node_id()? },
            0x07 => {
                let src = r.node_id()?;
                let wants_you = r.bool()?;
                let n = r.u8()?;
                let near = (0..n).map(|_| Ok((r.node_id()?, r.u8()?))).collect::<Result<_, DecodeError>>()?;
                Message::Neighbors { src, wants_you, near }
            }
            0x10 => {
                let src = r.node_id()?;
                let dst = r.node_id()?;
                let via = r.opt_node_id()?;
                let flags = r.u8()?;
                let mode = match r.u8()? {
                    0 => DeliveryMode::Exact,
                    1 => DeliveryMode::Closest,
                    _ => return Err(DecodeError::Invalid("delivery mode")),
                };
                let hops = r.u8()?;
                let ttl = r.u8()?;
                let proto = PayloadProtocol::from_u8(r.u8()?)?;
                let payload = r.bytes16()?.to_vec();
                if hops > ttl {
                    return Err(DecodeError::Invalid("hop count above ttl"));
                }
                Message::Routed(RoutedPacket {
                    src,
                    dst,
                    via,
                    via_reached: flags & 0x02 != 0,
                    mode,
                    exclude_source: flags & 0x01 != 0,
                    hops,
                    ttl,
                    proto,
                    payload,
                })
            }
            t => return Err(DecodeError::UnknownTag(t)),
        };
        r.finish()?;
        Ok(msg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CtmKind {
    Request,
    Reply,
}

/// ConnectToMe body, carried as a routed payload.
///
/// ```text
/// kind:u8 (1 request, 2 reply) join:u8 sender:id reply_via:opt-id
/// addresses: count:u8 (len:u16 utf8)*   neighbors: count:u8 id*
/// ```
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConnectToMe {
    pub kind: CtmKind,
    /// Set on the request a joining node sends toward its own id.
    pub join: bool,
    pub sender: NodeId,
    /// A node directly linked to the sender; replies are routed through it.
    pub reply_via: Option<NodeId>,
    /// Reflected endpoints first, then local ones, then relays.
    pub addresses: Vec<TransportAddress>,
    pub neighbors: Vec<(NodeId, u8)>,
}

impl ConnectToMe {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(match self.kind {
            CtmKind::Request => 1,
            CtmKind::Reply => 2,
        })
        .bool(self.join)
        .node_id(self.sender)
        .opt_node_id(self.reply_via)
        .addresses(&self.addresses)
        .u8(self.neighbors.len().min(255) as u8);
        for (id, flags) in self.neighbors.iter().take(255) {
            w.node_id(*id).u8(*flags);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let kind = match r.u8()? {
            1 => CtmKind::Request,
            2 => CtmKind::Reply,
            t => return Err(DecodeError::UnknownTag(t)),
        };
        let join = r.bool()?;
        let sender = r.node_id()?;
        let reply_via = r.opt_node_id()?;
        let addresses = r.addresses()?;
        let n = r.u8()?;
        let neighbors = (0..n).map(|_| Ok((r.node_id()?, r.u8()?))).collect::<Result<_, DecodeError>>()?;
        r.finish()?;
        Ok(ConnectToMe { kind, join, sender, reply_via, addresses, neighbors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::net::Ipv4Addr;

    fn arb_id() -> impl Strategy<Value = NodeId> {
        proptest::array::uniform20(any::<u8>()).prop_map(NodeId::from_bytes)
    }

    fn arb_ep() -> impl Strategy<Value = Option<Endpoint>> {
        proptest::option::of((any::<u32>(), any::<u16>()).prop_map(|(ip, p)| Endpoint::new(Ipv4Addr::from(ip), p)))
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        let proto = prop_oneof![
            Just(PayloadProtocol::DhtRpc),
            Just(PayloadProtocol::ConnectToMe),
            Just(PayloadProtocol::Subring),
            Just(PayloadProtocol::TunnelControl),
            Just(PayloadProtocol::App),
        ];
        prop_oneof![
            (arb_id(), arb_id(), any::<u64>()).prop_map(|(src, dst, nonce)| Message::Hello { src, dst, nonce }),
            (arb_id(), arb_id(), any::<u64>(), arb_ep())
                .prop_map(|(src, dst, nonce, observed)| Message::HelloAck { src, dst, nonce, observed }),
            (arb_id(), arb_id(), any::<u64>(), arb_ep())
                .prop_map(|(src, dst, nonce, observed)| Message::Confirm { src, dst, nonce, observed }),
            (arb_id(), arb_id(), any::<u64>()).prop_map(|(src, dst, nonce)| Message::Ping { src, dst, nonce }),
            (arb_id(), arb_id()).prop_map(|(src, dst)| Message::Close { src, dst }),
            (arb_id(), any::<bool>(), proptest::collection::vec((arb_id(), 0u8..2), 0..6))
                .prop_map(|(src, wants_you, near)| Message::Neighbors { src, wants_you, near }),
            (
                arb_id(),
                arb_id(),
                proptest::option::of(arb_id()),
                any::<(bool, bool, bool)>(),
                0u8..=64,
                proto,
                proptest::collection::vec(any::<u8>(), 0..64)
            )
                .prop_map(|(src, dst, via, (reached, excl, closest), hops, proto, payload)| {
                    Message::Routed(RoutedPacket {
                        src,
                        dst,
                        via,
                        via_reached: reached,
                        mode: if closest { DeliveryMode::Closest } else { DeliveryMode::Exact },
                        exclude_source: excl,
                        hops,
                        ttl: DEFAULT_TTL,
                        proto,
                        payload,
                    })
                }),
        ]
    }

    proptest! {
        #[test]
        fn messages_round_trip(msg in arb_message()) {
            prop_assert_eq!(Message::decode(&msg.encode()).unwrap(), msg);
        }

        #[test]
        fn decoding_garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..80)) {
            let _ = Message::decode(&bytes);
            let _ = ConnectToMe::decode(&bytes);
        }
    }

    #[test]
    fn hello_layout_is_fixed() {
        let m = Message::Hello { src: NodeId::from_u128(1), dst: NodeId::ZERO, nonce: 2 };
        let b = m.encode();
        assert_eq!(b.len(), 1 + 20 + 20 + 8);
        assert_eq!(b[0], 0x01);
        assert_eq!(b[20], 1);
        assert_eq!(&b[41..], &[0, 0, 0, 0, 0, 0, 0, 2]);
    }

    #[test]
    fn ctm_round_trip() {
        let c = ConnectToMe {
            kind: CtmKind::Reply,
            join: true,
            sender: NodeId::from_u128(5),
            reply_via: Some(NodeId::from_u128(6)),
            addresses: vec!["udp://16.0.0.1:1024".parse().unwrap(), "brunet://0000000000000000000000000000000000000007".parse().unwrap()],
            neighbors: vec![(NodeId::from_u128(8), NEIGHBOR_FORWARDABLE)],
        };
        assert_eq!(ConnectToMe::decode(&c.encode()).unwrap(), c);
    }

    #[test]
    fn hops_above_ttl_rejected() {
        let mut p = RoutedPacket::new(NodeId::ZERO, NodeId::ZERO, DeliveryMode::Exact, PayloadProtocol::App, vec![]);
        p.ttl = 3;
        p.hops = 4;
        assert!(Message::decode(&Message::Routed(p).encode()).is_err());
    }
}
