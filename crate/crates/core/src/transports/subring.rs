//! Subring frames: private-overlay frames inside exact-mode routed packets
//! addressed to the remote host's public id.
//!
//! ```text
//! kind:u8 (0x01 data, 0x02 ack) seq:u32 ns:20 src:20 dst:20 payload
//! ```
//!
//! `src` and `dst` are private-overlay ids; a zero `dst` matches any
//! instance of the namespace (the remote id is not known before the first
//! handshake).

use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use crate::codec::{DecodeError, Reader, Writer};
use crate::identifiers::{NodeId, Scheme, TransportAddress};
use crate::overlay::{DeliveryMode, OverlayNode, PayloadProtocol};
use crate::simnet::SimTime;

/// Canonical relay address for a host: `brunet://<public id>`.
pub fn subring_address(public_id: NodeId) -> TransportAddress {
    TransportAddress::brunet(public_id)
}

pub fn subring_public_id(addr: &TransportAddress) -> Option<NodeId> {
    match addr.scheme {
        Scheme::Brunet | Scheme::Subring => addr.node_id(),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubringKind {
    Data,
    Ack,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubringFrame {
    pub kind: SubringKind,
    pub seq: u32,
    pub namespace: NodeId,
    pub src: NodeId,
    pub dst: NodeId,
    pub payload: Vec<u8>,
}

impl SubringFrame {
    pub fn encode(&self) -> Vec<u8> {
        let kind = match self.kind {
            SubringKind::Data => 0x01,
            SubringKind::Ack => 0x02,
        };
        Writer::with_tag(kind)
            .u32(self.seq)
            .node_id(self.namespace)
            .node_id(self.src)
            .node_id(self.dst)
            .raw(&self.payload)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let kind = match r.u8()? {
            0x01 => SubringKind::Data,
            0x02 => SubringKind::Ack,
            t => return Err(DecodeError::UnknownTag(t)),
        };
        Ok(SubringFrame {
            kind,
            seq: r.u32()?,
            namespace: r.node_id()?,
            src: r.node_id()?,
            dst: r.node_id()?,
            payload: r.rest().to_vec(),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SubringStats {
    pub sent: u64,
    pub retried: u64,
    pub acked: u64,
    pub unacked: u64,
    pub received: u64,
    pub wrong_destination: u64,
    pub queue_expired: u64,
}

#[derive(Clone, Debug)]
struct Unacked {
    dst_public: NodeId,
    frame: Vec<u8>,
    deadline: SimTime,
    retries: u32,
}

/// Subring endpoint of one private-overlay instance.
///
/// Data frames are acked by the receiver and resent up to `max_retries` times,
/// `retry_after` apart, until an ack arrives. Frames sent before the public node has any link wait
/// in a queue for up to `queue_timeout`.
#[derive(Clone, Debug)]
pub struct SubringRelay {
    namespace: NodeId,
    retry_after: Duration,
    max_retries: u32,
    queue_timeout: Duration,
    next_seq: u32,
    unacked: BTreeMap<u32, Unacked>,
    queued: VecDeque<(SimTime, NodeId, Vec<u8>)>,
    stats: SubringStats,
}

impl SubringRelay {
    pub fn new(namespace: NodeId) -> Self {
        SubringRelay {
            namespace,
            retry_after: Duration::from_secs(1),
            max_retries: 2,
            queue_timeout: Duration::from_secs(10),
            next_seq: 1,
            unacked: BTreeMap::new(),
            queued: VecDeque::new(),
            stats: SubringStats::default(),
        }
    }

    pub fn namespace(&self) -> NodeId {
        self.namespace
    }

    pub fn stats(&self) -> SubringStats {
        self.stats
    }

    fn ready(public: &OverlayNode) -> bool {
        !public.links().is_empty()
    }

    pub fn send(
        &mut self,
        now: SimTime,
        public: &mut OverlayNode,
        dst_public: NodeId,
        src: NodeId,
        dst: NodeId,
        payload: Vec<u8>,
    ) {
        let seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1).max(1);
        let frame = SubringFrame { kind: SubringKind::Data, seq, namespace: self.namespace, src, dst, payload }.encode();
        self.stats.sent += 1;
        self.unacked.insert(seq, Unacked { dst_public, frame: frame.clone(), deadline: now + self.retry_after, retries: 0 });
        if Self::ready(public) {
            public.route(now, dst_public, DeliveryMode::Exact, PayloadProtocol::Subring, frame);
        } else {
            self.queued.push_back((now, dst_public, frame));
        }
    }

    /// Handles a frame for this namespace from the host with public id
    /// `from_public`. Data addressed to `own` comes back as (relay address, payload).
    pub fn receive(
        &mut self,
        now: SimTime,
        public: &mut OverlayNode,
        from_public: NodeId,
        frame: SubringFrame,
        own: NodeId,
    ) -> Option<(TransportAddress, Vec<u8>)> {
        match frame.kind {
            SubringKind::Ack => {
                if self.unacked.remove(&frame.seq).is_some() {
                    self.stats.acked += 1;
                }
                None
            }
            SubringKind::Data => {
                if !frame.dst.is_zero() && frame.dst != own {
                    self.stats.wrong_destination += 1;
                    return None;
                }
                self.stats.received += 1;
                let ack = SubringFrame {
                    kind: SubringKind::Ack,
                    seq: frame.seq,
                    namespace: self.namespace,
                    src: own,
                    dst: frame.src,
                    payload: Vec::new(),
                };
                public.route(now, from_public, DeliveryMode::Exact, PayloadProtocol::Subring, ack.encode());
                Some((subring_address(from_public), frame.payload))
            }
        }
    }

    pub fn handle_timeout(&mut self, now: SimTime, public: &mut OverlayNode) {
        if Self::ready(public) {
            while let Some((_, dst, frame)) = self.queued.pop_front() {
                public.route(now, dst, DeliveryMode::Exact, PayloadProtocol::Subring, frame);
            }
        } else {
            let timeout = self.queue_timeout;
            let before = self.queued.len();
            self.queued.retain(|(t, _, _)| now.saturating_since(*t) < timeout);
            self.stats.queue_expired += (before - self.queued.len()) as u64;
        }
        let due: Vec<u32> = self.unacked.iter().filter(|(_, u)| u.deadline <= now).map(|(s, _)| *s).collect();
        for seq in due {
            let u = self.unacked.get_mut(&seq).expect("due frame");
            if u.retries >= self.max_retries || !Self::ready(public) {
                self.unacked.remove(&seq);
                self.stats.unacked += 1;
                continue;
            }
            u.retries += 1;
            u.deadline = now + self.retry_after;
            self.stats.retried += 1;
            let (dst, frame) = (u.dst_public, u.frame.clone());
            public.route(now, dst, DeliveryMode::Exact, PayloadProtocol::Subring, frame);
        }
    }

    pub fn poll_timeout(&self) -> Option<SimTime> {
        let queued = self.queued.front().map(|(t, _, _)| *t + self.queue_timeout);
        self.unacked.values().map(|u| u.deadline).chain(queued).min()
    }

    /// Feeds queued frames as soon as the public node gains a link.
    pub fn has_queued(&self) -> bool {
        !self.queued.is_empty()
    }
}
