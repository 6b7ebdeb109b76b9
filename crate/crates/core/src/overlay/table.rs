use std::collections::BTreeMap;

use crate::identifiers::{ring_distance, NodeId, TransportAddress, U160};
use crate::simnet::{Endpoint, SimTime};

/// How frames for a link leave this node.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinkPath {
    /// Straight to an IP endpoint on the shared socket.
    Direct(Endpoint),
    /// Through a common neighbor, as routed packets.
    Tunnel(NodeId),
    /// Over a relay transport: subring (`brunet://`) or presence IQ (`xmpp://`).
    Relay(TransportAddress),
}

impl LinkPath {
    pub fn class(&self) -> LinkClass {
        match self {
            LinkPath::Direct(_) => LinkClass::Direct,
            LinkPath::Tunnel(_) => LinkClass::Tunneled,
            LinkPath::Relay(_) => LinkClass::Relayed,
        }
    }
}

/// Outcome class of a link; the derived order is best first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkClass {
    Direct,
    Tunneled,
    Relayed,
}

impl LinkClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkClass::Direct => "direct",
            LinkClass::Tunneled => "tunneled",
            LinkClass::Relayed => "relayed",
        }
    }
}

/// One established link. Handshakes in progress live in the node's linkers.
#[derive(Clone, Debug)]
pub struct Link {
    pub remote: NodeId,
    pub path: LinkPath,
    /// Where the remote's frames were seen coming from, for direct links.
    pub observed_remote: Option<Endpoint>,
    /// What the remote reported seeing of us at handshake time.
    pub observed_self: Option<Endpoint>,
    /// Last address list the remote sent in a ConnectToMe.
    pub remote_addresses: Vec<TransportAddress>,
    /// The remote's near set and per-entry flags, from its last neighbor list.
    pub remote_near: Vec<(NodeId, u8)>,
    /// The remote lists us in its near set.
    pub remote_wants: bool,
    /// Direct traversal was tried and failed; keep the current path.
    pub permanent: bool,
    pub established_at: SimTime,
    pub last_heard: SimTime,
    pub(crate) ping: Option<u64>,
    pub(crate) missed_pings: u32,
    pub(crate) unwanted_ticks: u32,
    pub(crate) upgrade_sent: Option<SimTime>,
}

impl Link {
    pub(crate) fn new(remote: NodeId, path: LinkPath, now: SimTime) -> Self {
        Link {
            remote,
            path,
            observed_remote: None,
            observed_self: None,
            remote_addresses: Vec::new(),
            remote_near: Vec::new(),
            remote_wants: false,
            permanent: false,
            established_at: now,
            last_heard: now,
            ping: None,
            missed_pings: 0,
            unwanted_ticks: 0,
            upgrade_sent: None,
        }
    }

    pub fn class(&self) -> LinkClass {
        self.path.class()
    }
}

/// Ordering key for "closer to `dst`": ring distance, ties to the lower id.
pub fn closeness(id: NodeId, dst: NodeId) -> (U160, NodeId) {
    (ring_distance(id, dst), id)
}

/// The `k` nearest ids on each side of `me`: right is clockwise (increasing
/// ids), left counter-clockwise. Each list is ordered nearest first. On rings
/// with fewer than `2k + 1` members the two sides share entries.
pub fn k_nearest<I>(me: NodeId, ids: I, k: usize) -> (Vec<NodeId>, Vec<NodeId>)
where
    I: IntoIterator<Item = NodeId>,
{
    let mut all: Vec<NodeId> = ids.into_iter().filter(|id| *id != me).collect();
    all.sort();
    all.dedup();
    let mut right = all.clone();
    right.sort_by_key(|id| me.clockwise_to(*id));
    right.truncate(k);
    let mut left = all;
    left.sort_by_key(|id| id.clockwise_to(me));
    left.truncate(k);
    (right, left)
}

/// Where greedy routing sends a packet next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NextHop {
    /// This node is at least as close as every candidate link.
    Local,
    Link(NodeId),
}

/// Picks the candidate minimizing [`closeness`] to `dst`.
///
/// With `self_eligible` false the node never chooses itself and returns a
/// link whenever one exists; `None` then means there is nowhere to go.
pub fn greedy_next_hop<I>(me: NodeId, links: I, dst: NodeId, self_eligible: bool) -> Option<NextHop>
where
    I: IntoIterator<Item = NodeId>,
{
    let best = links.into_iter().filter(|id| *id != me).min_by_key(|id| closeness(*id, dst));
    match (best, self_eligible) {
        (Some(b), true) if closeness(b, dst) < closeness(me, dst) => Some(NextHop::Link(b)),
        (_, true) => Some(NextHop::Local),
        (Some(b), false) => Some(NextHop::Link(b)),
        (None, false) => None,
    }
}

/// Links keyed by remote id: at most one link per remote.
#[derive(Clone, Debug, Default)]
pub struct LinkTable {
    links: BTreeMap<NodeId, Link>,
    k: usize,
}

impl LinkTable {
    pub fn new(k: usize) -> Self {
        LinkTable { links: BTreeMap::new(), k }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn set_k(&mut self, k: usize) {
        self.k = k;
    }

    pub fn get(&self, id: &NodeId) -> Option<&Link> {
        self.links.get(id)
    }

    pub fn get_mut(&mut self, id: &NodeId) -> Option<&mut Link> {
        self.links.get_mut(id)
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.links.contains_key(id)
    }

    pub(crate) fn insert(&mut self, link: Link) -> Option<Link> {
        self.links.insert(link.remote, link)
    }

    pub(crate) fn remove(&mut self, id: &NodeId) -> Option<Link> {
        self.links.remove(id)
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Link> {
        self.links.values()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut Link> {
        self.links.values_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.links.keys().copied()
    }

    /// `(near_right, near_left)` among current links.
    pub fn near(&self, me: NodeId) -> (Vec<NodeId>, Vec<NodeId>) {
        k_nearest(me, self.ids(), self.k)
    }

    pub fn is_near(&self, me: NodeId, id: NodeId) -> bool {
        let (r, l) = self.near(me);
        r.contains(&id) || l.contains(&id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(v: u128) -> NodeId {
        NodeId::from_u128(v)
    }

    #[test]
    fn next_hop_for_own_id_is_local() {
        assert_eq!(greedy_next_hop(id(10), [id(50), id(90)], id(10), true), Some(NextHop::Local));
    }

    #[test]
    fn small_ring_forwards_toward_key() {
        // ring {10, 50, 90}: from 10, key 60 goes to 50, which keeps it
        let ring = [id(10), id(50), id(90)];
        assert_eq!(greedy_next_hop(id(10), ring, id(60), true), Some(NextHop::Link(id(50))));
        assert_eq!(greedy_next_hop(id(50), ring, id(60), true), Some(NextHop::Local));
    }

    #[test]
    fn excluded_self_still_forwards() {
        assert_eq!(greedy_next_hop(id(10), [id(90)], id(10), false), Some(NextHop::Link(id(90))));
        assert_eq!(greedy_next_hop(id(10), [], id(10), false), None);
    }

    #[test]
    fn k_nearest_wraps_around_zero() {
        let me = id(2);
        let max = NodeId::from_bytes([0xff; 20]);
        let (r, l) = k_nearest(me, [id(1), id(3), id(4), max, id(100)], 2);
        assert_eq!(r, vec![id(3), id(4)]);
        assert_eq!(l, vec![id(1), max]);
    }

    proptest! {
        #[test]
        fn k_nearest_matches_sorted_ring(raw in proptest::collection::btree_set(any::<u64>(), 2..40), k in 1usize..4) {
            let ids: Vec<NodeId> = raw.iter().map(|v| id(*v as u128)).collect();
            let me = ids[0];
            let (r, l) = k_nearest(me, ids.clone(), k);
            // oracle: walk the sorted ring from me in each direction
            let mut sorted = ids.clone();
            sorted.sort();
            let pos = sorted.iter().position(|x| *x == me).unwrap();
            let n = sorted.len();
            let take = k.min(n - 1);
            let right: Vec<_> = (1..=take).map(|i| sorted[(pos + i) % n]).collect();
            let left: Vec<_> = (1..=take).map(|i| sorted[(pos + n - i) % n]).collect();
            prop_assert_eq!(r, right);
            prop_assert_eq!(l, left);
        }
    }
}
