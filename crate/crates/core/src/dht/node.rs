use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use crate::identifiers::NodeId;
use crate::overlay::{DeliveryMode, OverlayNode, PayloadProtocol, RoutedPacket};
use crate::simnet::SimTime;

use super::rpc::DhtRpc;
use super::store::{check_put, LeaseStore};
use super::DhtError;

pub type RequestId = u64;

#[derive(Clone, Debug)]
pub struct DhtConfig {
    /// Sends per request, spread evenly over `rpc_window`.
    pub attempts: u32,
    pub rpc_window: Duration,
    pub sweep_period: Duration,
}

impl Default for DhtConfig {
    fn default() -> Self {
        DhtConfig { attempts: 3, rpc_window: Duration::from_secs(10), sweep_period: Duration::from_secs(1) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DhtEvent {
    PutDone { req: RequestId, key: NodeId, ok: bool },
    /// `determinate` is false when no reply came back; `values` is then empty.
    GetDone { req: RequestId, key: NodeId, values: Vec<Vec<u8>>, determinate: bool },
}

#[derive(Clone, Debug)]
enum Op {
    Put { key: NodeId, value: Vec<u8>, ttl: u32 },
    Get { key: NodeId },
}

impl Op {
    fn key(&self) -> NodeId {
        match self {
            Op::Put { key, .. } | Op::Get { key } => *key,
        }
    }
}

#[derive(Clone, Debug)]
struct Pending {
    op: Op,
    sent: u32,
    deadline: SimTime,
}

/// DHT endpoint for one overlay node: holds the leases it is closest to and
/// tracks its own outstanding requests.
pub struct DhtNode {
    config: DhtConfig,
    store: LeaseStore,
    pending: BTreeMap<RequestId, Pending>,
    next_req: RequestId,
    next_sweep: Option<SimTime>,
    events: VecDeque<DhtEvent>,
    swept: u64,
}

impl DhtNode {
    pub fn new(config: DhtConfig) -> Self {
        DhtNode {
            config,
            store: LeaseStore::new(),
            pending: BTreeMap::new(),
            next_req: 1,
            next_sweep: None,
            events: VecDeque::new(),
            swept: 0,
        }
    }

    pub fn store(&self) -> &LeaseStore {
        &self.store
    }

    /// Entries removed by sweeps so far.
    pub fn swept(&self) -> u64 {
        self.swept
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    fn attempt_timeout(&self) -> Duration {
        self.config.rpc_window / self.config.attempts.max(1)
    }

    pub fn put(
        &mut self,
        now: SimTime,
        overlay: &mut OverlayNode,
        key: NodeId,
        value: Vec<u8>,
        ttl_secs: u32,
    ) -> Result<RequestId, DhtError> {
        check_put(&value, ttl_secs)?;
        Ok(self.issue(now, overlay, Op::Put { key, value, ttl: ttl_secs }))
    }

    pub fn get(&mut self, now: SimTime, overlay: &mut OverlayNode, key: NodeId) -> RequestId {
        self.issue(now, overlay, Op::Get { key })
    }

    fn issue(&mut self, now: SimTime, overlay: &mut OverlayNode, op: Op) -> RequestId {
        let req = self.next_req;
        self.next_req += 1;
        self.pending.insert(req, Pending { op, sent: 0, deadline: now });
        self.send(now, overlay, req);
        req
    }

    fn send(&mut self, now: SimTime, overlay: &mut OverlayNode, req: RequestId) {
        let timeout = self.attempt_timeout();
        let Some(p) = self.pending.get_mut(&req) else { return };
        p.sent += 1;
        p.deadline = now + timeout;
        let key = p.op.key();
        let reply_via = overlay.reply_via_hint(key);
        let rpc = match &p.op {
            Op::Put { key, value, ttl } => DhtRpc::Put { req, reply_via, key: *key, ttl: *ttl, value: value.clone() },
            Op::Get { key } => DhtRpc::Get { req, reply_via, key: *key },
        };
        overlay.route(now, key, DeliveryMode::Closest, PayloadProtocol::DhtRpc, rpc.encode());
    }

    /// Feeds a delivered `DhtRpc` packet.
    pub fn handle_packet(&mut self, now: SimTime, overlay: &mut OverlayNode, p: &RoutedPacket) {
        let Ok(rpc) = DhtRpc::decode(&p.payload) else { return };
        match rpc {
            DhtRpc::Put { req, reply_via, key, ttl, value } => {
                let stored = self.store.put(now, key, value, ttl, p.src).is_ok();
                if stored && self.next_sweep.is_none() {
                    self.next_sweep = Some(now + self.config.sweep_period);
                }
                let ack = DhtRpc::PutAck { req, key, stored };
                overlay.route_via(now, p.src, reply_via, DeliveryMode::Exact, PayloadProtocol::DhtRpc, ack.encode());
            }
            DhtRpc::Get { req, reply_via, key } => {
                let reply = DhtRpc::GetReply { req, key, values: self.store.get(now, &key) };
                overlay.route_via(now, p.src, reply_via, DeliveryMode::Exact, PayloadProtocol::DhtRpc, reply.encode());
            }
            DhtRpc::PutAck { req, key, stored } => {
                if matches!(self.pending.get(&req), Some(Pending { op: Op::Put { .. }, .. })) {
                    self.pending.remove(&req);
                    self.events.push_back(DhtEvent::PutDone { req, key, ok: stored });
                }
            }
            DhtRpc::GetReply { req, key, values } => {
                if matches!(self.pending.get(&req), Some(Pending { op: Op::Get { .. }, .. })) {
                    self.pending.remove(&req);
                    self.events.push_back(DhtEvent::GetDone { req, key, values, determinate: true });
                }
            }
        }
    }

    pub fn handle_timeout(&mut self, now: SimTime, overlay: &mut OverlayNode) {
        if self.next_sweep.is_some_and(|t| t <= now) {
            self.swept += self.store.sweep(now) as u64;
            self.next_sweep = (!self.store.is_empty()).then(|| now + self.config.sweep_period);
        }
        let due: Vec<RequestId> = self.pending.iter().filter(|(_, p)| p.deadline <= now).map(|(r, _)| *r).collect();
        for req in due {
            let p = &self.pending[&req];
            if p.sent < self.config.attempts {
                self.send(now, overlay, req);
                continue;
            }
            let p = self.pending.remove(&req).expect("due request");
            self.events.push_back(match p.op {
                Op::Put { key, .. } => DhtEvent::PutDone { req, key, ok: false },
                Op::Get { key } => DhtEvent::GetDone { req, key, values: Vec::new(), determinate: false },
            });
        }
    }

    pub fn poll_timeout(&self) -> Option<SimTime> {
        self.pending.values().map(|p| p.deadline).chain(self.next_sweep).min()
    }

    pub fn poll_event(&mut self) -> Option<DhtEvent> {
        self.events.pop_front()
    }
}
