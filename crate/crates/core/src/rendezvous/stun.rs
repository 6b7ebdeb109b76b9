//! Minimal STUN-style binding service.
//!
//! ```text
//! type:u16 length:u16 cookie:u32=0x2112A442 txid:12 attrs
//! XOR-MAPPED-ADDRESS  0x0020 len=8  0x00 family=0x01 port^0x2112 ipv4^cookie
//! ```
//!
//! Types are 0x0001 (binding request) and 0x0101 (binding response); both
//! leave the top two bits of the first byte zero.

use std::collections::VecDeque;
use std::net::Ipv4Addr;
use std::time::Duration;

use crate::codec::{DecodeError, Reader, Writer};
use crate::simnet::{Endpoint, SimTime};

pub const STUN_COOKIE: u32 = 0x2112_A442;
pub const STUN_PORT: u16 = 3478;
const BINDING_REQUEST: u16 = 0x0001;
const BINDING_RESPONSE: u16 = 0x0101;
const XOR_MAPPED_ADDRESS: u16 = 0x0020;
const HEADER: usize = 20;

/// Two zero bits, a known type, the cookie, and a consistent length.
pub fn is_stun_message(bytes: &[u8]) -> bool {
    if bytes.len() < HEADER || bytes[0] & 0xC0 != 0 {
        return false;
    }
    let ty = u16::from_be_bytes([bytes[0], bytes[1]]);
    let len = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
    let cookie = u32::from_be_bytes(bytes[4..8].try_into().expect("4 bytes"));
    matches!(ty, BINDING_REQUEST | BINDING_RESPONSE) && cookie == STUN_COOKIE && len == bytes.len() - HEADER
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StunMessage {
    pub response: bool,
    pub txid: [u8; 12],
    pub mapped: Option<Endpoint>,
}

impl StunMessage {
    pub fn request(txid: [u8; 12]) -> Self {
        StunMessage { response: false, txid, mapped: None }
    }

    pub fn response(txid: [u8; 12], mapped: Endpoint) -> Self {
        StunMessage { response: true, txid, mapped: Some(mapped) }
    }

    pub fn encode(&self) -> Vec<u8> {
        let ty = if self.response { BINDING_RESPONSE } else { BINDING_REQUEST };
        let attr_len = if self.mapped.is_some() { 12 } else { 0 };
        let mut w = Writer::new();
        w.u16(ty).u16(attr_len).u32(STUN_COOKIE).raw(&self.txid);
        if let Some(ep) = self.mapped {
            w.u16(XOR_MAPPED_ADDRESS).u16(8).u8(0).u8(0x01);
            w.u16(ep.port ^ (STUN_COOKIE >> 16) as u16).u32(u32::from(ep.ip) ^ STUN_COOKIE);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        if !is_stun_message(bytes) {
            return Err(DecodeError::Invalid("not a stun message"));
        }
        let mut r = Reader::new(bytes);
        let response = r.u16()? == BINDING_RESPONSE;
        r.take(6)?;
        let txid: [u8; 12] = r.take(12)?.try_into().expect("12 bytes");
        let mut mapped = None;
        while r.remaining() > 0 {
            let ty = r.u16()?;
            let len = r.u16()? as usize;
            let body = r.take(len)?;
            if ty == XOR_MAPPED_ADDRESS && len == 8 && body[1] == 0x01 {
                let port = u16::from_be_bytes([body[2], body[3]]) ^ (STUN_COOKIE >> 16) as u16;
                let ip = u32::from_be_bytes(body[4..8].try_into().expect("4 bytes")) ^ STUN_COOKIE;
                mapped = Some(Endpoint::new(Ipv4Addr::from(ip), port));
            }
        }
        Ok(StunMessage { response, txid, mapped })
    }
}

/// Answers binding requests with the source endpoint they arrived from.
pub fn stun_server_reply(from: Endpoint, bytes: &[u8]) -> Option<Vec<u8>> {
    match StunMessage::decode(bytes) {
        Ok(m) if !m.response => Some(StunMessage::response(m.txid, from).encode()),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StunOutcome {
    Pending,
    Mapped(Endpoint),
    /// No answer after every retry.
    Unavailable,
}

/// Binding client: one request per second, five at most.
#[derive(Clone, Debug)]
pub struct StunClient {
    server: Endpoint,
    txid: [u8; 12],
    retry: Duration,
    max_sends: u32,
    sent: u32,
    next_send: Option<SimTime>,
    outcome: StunOutcome,
    out: VecDeque<(Endpoint, Vec<u8>)>,
}

impl StunClient {
    pub fn new(server: Endpoint, txid: [u8; 12]) -> Self {
        StunClient {
            server,
            txid,
            retry: Duration::from_secs(1),
            max_sends: 5,
            sent: 0,
            next_send: None,
            outcome: StunOutcome::Pending,
            out: VecDeque::new(),
        }
    }

    pub fn server(&self) -> Endpoint {
        self.server
    }

    pub fn outcome(&self) -> StunOutcome {
        self.outcome
    }

    pub fn start(&mut self, now: SimTime) {
        if self.sent == 0 {
            self.send(now);
        }
    }

    fn send(&mut self, now: SimTime) {
        self.sent += 1;
        self.next_send = Some(now + self.retry);
        self.out.push_back((self.server, StunMessage::request(self.txid).encode()));
    }

    /// Returns the outcome if this response settled it.
    pub fn handle_response(&mut self, bytes: &[u8]) -> Option<StunOutcome> {
        let m = StunMessage::decode(bytes).ok()?;
        if !m.response || m.txid != self.txid || self.outcome != StunOutcome::Pending {
            return None;
        }
        self.outcome = StunOutcome::Mapped(m.mapped?);
        self.next_send = None;
        Some(self.outcome)
    }

    pub fn handle_timeout(&mut self, now: SimTime) -> Option<StunOutcome> {
        if self.next_send.is_none_or(|t| t > now) || self.outcome != StunOutcome::Pending {
            return None;
        }
        if self.sent >= self.max_sends {
            self.next_send = None;
            self.outcome = StunOutcome::Unavailable;
            return Some(self.outcome);
        }
        self.send(now);
        None
    }

    pub fn poll_timeout(&self) -> Option<SimTime> {
        self.next_send
    }

    pub fn poll_transmit(&mut self) -> Option<(Endpoint, Vec<u8>)> {
        self.out.pop_front()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ep(port: u16) -> Endpoint {
        Endpoint::new(Ipv4Addr::new(16, 0, 0, 9), port)
    }

    #[test]
    fn header_bits_and_cookie() {
        let b = StunMessage::request([1; 12]).encode();
        assert_eq!(b.len(), 20);
        assert_eq!(b[0] & 0xC0, 0);
        assert_eq!(&b[4..8], &[0x21, 0x12, 0xA4, 0x42]);
        let r = StunMessage::response([1; 12], ep(1024)).encode();
        assert_eq!(r.len(), 32);
        assert_eq!(StunMessage::decode(&r).unwrap().mapped, Some(ep(1024)));
    }

    #[test]
    fn server_echoes_source() {
        let req = StunMessage::request([3; 12]).encode();
        let resp = stun_server_reply(ep(5000), &req).unwrap();
        assert_eq!(StunMessage::decode(&resp).unwrap(), StunMessage::response([3; 12], ep(5000)));
        assert_eq!(stun_server_reply(ep(5000), &resp), None);
    }

    #[test]
    fn client_gives_up_after_five_sends() {
        let mut c = StunClient::new(ep(STUN_PORT), [0; 12]);
        c.start(SimTime::ZERO);
        let mut sends = 0;
        while c.poll_transmit().is_some() {
            sends += 1;
        }
        let mut t = SimTime::ZERO;
        while let Some(next) = c.poll_timeout() {
            t = next;
            c.handle_timeout(t);
            while c.poll_transmit().is_some() {
                sends += 1;
            }
        }
        assert_eq!(sends, 5);
        assert_eq!(t, SimTime::from_secs(5));
        assert_eq!(c.outcome(), StunOutcome::Unavailable);
    }

    #[test]
    fn client_accepts_matching_response_only() {
        let mut c = StunClient::new(ep(STUN_PORT), [4; 12]);
        c.start(SimTime::ZERO);
        assert_eq!(c.handle_response(&StunMessage::response([5; 12], ep(1)).encode()), None);
        assert_eq!(c.handle_response(&StunMessage::response([4; 12], ep(2)).encode()), Some(StunOutcome::Mapped(ep(2))));
        assert_eq!(c.poll_timeout(), None);
    }

    proptest! {
        #[test]
        fn response_round_trip(ip in any::<u32>(), port in 1u16.., txid in any::<[u8; 12]>()) {
            let m = StunMessage::response(txid, Endpoint::new(Ipv4Addr::from(ip), port));
            prop_assert_eq!(StunMessage::decode(&m.encode()).unwrap(), m);
        }
    }
}
