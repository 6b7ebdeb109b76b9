//! Small big-endian byte codec shared by the wire formats.

use std::net::Ipv4Addr;

use crate::identifiers::{NodeId, TransportAddress, ID_BYTES};
use crate::simnet::Endpoint;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("frame truncated")]
    Truncated,
    #[error("unknown tag {0:#04x}")]
    UnknownTag(u8),
    #[error("invalid field: {0}")]
    Invalid(&'static str),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DecodeError::Invalid("boolean")),
        }
    }

    pub fn node_id(&mut self) -> Result<NodeId, DecodeError> {
        Ok(NodeId::from_bytes(self.take(ID_BYTES)?.try_into().expect("20 bytes")))
    }

    pub fn opt_node_id(&mut self) -> Result<Option<NodeId>, DecodeError> {
        Ok(if self.bool()? { Some(self.node_id()?) } else { None })
    }

    pub fn endpoint(&mut self) -> Result<Endpoint, DecodeError> {
        let ip = Ipv4Addr::from(self.u32()?);
        Ok(Endpoint::new(ip, self.u16()?))
    }

    pub fn opt_endpoint(&mut self) -> Result<Option<Endpoint>, DecodeError> {
        Ok(if self.bool()? { Some(self.endpoint()?) } else { None })
    }

    /// `u16` length followed by that many bytes.
    pub fn bytes16(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.u16()? as usize;
        self.take(n)
    }

    pub fn str16(&mut self) -> Result<&'a str, DecodeError> {
        std::str::from_utf8(self.bytes16()?).map_err(|_| DecodeError::Invalid("utf-8"))
    }

    pub fn address(&mut self) -> Result<TransportAddress, DecodeError> {
        self.str16()?.parse().map_err(|_| DecodeError::Invalid("transport address"))
    }

    /// `u8` count followed by that many addresses.
    pub fn addresses(&mut self) -> Result<Vec<TransportAddress>, DecodeError> {
        let n = self.u8()?;
        (0..n).map(|_| self.address()).collect()
    }

    pub fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len()
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.buf.len() {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}

/// Append-only writer mirroring [`Reader`].
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn with_tag(tag: u8) -> Self {
        Writer { buf: vec![tag] }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    pub fn node_id(&mut self, id: NodeId) -> &mut Self {
        self.buf.extend_from_slice(&id.to_bytes());
        self
    }

    pub fn opt_node_id(&mut self, id: Option<NodeId>) -> &mut Self {
        self.bool(id.is_some());
        if let Some(id) = id {
            self.node_id(id);
        }
        self
    }

    pub fn endpoint(&mut self, ep: Endpoint) -> &mut Self {
        self.u32(ep.ip.into()).u16(ep.port)
    }

    pub fn opt_endpoint(&mut self, ep: Option<Endpoint>) -> &mut Self {
        self.bool(ep.is_some());
        if let Some(ep) = ep {
            self.endpoint(ep);
        }
        self
    }

    /// Panics if `b` is longer than `u16::MAX`; callers bound their inputs.
    pub fn bytes16(&mut self, b: &[u8]) -> &mut Self {
        let n = u16::try_from(b.len()).expect("field longer than 65535 bytes");
        self.u16(n);
        self.buf.extend_from_slice(b);
        self
    }

    pub fn address(&mut self, a: &TransportAddress) -> &mut Self {
        self.bytes16(a.to_string().as_bytes())
    }

    pub fn addresses(&mut self, list: &[TransportAddress]) -> &mut Self {
        let list = &list[..list.len().min(u8::MAX as usize)];
        self.u8(list.len() as u8);
        for a in list {
            self.address(a);
        }
        self
    }

    pub fn raw(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_mixed_fields() {
        let ep = Endpoint::new(Ipv4Addr::new(16, 0, 0, 3), 1024);
        let addr: TransportAddress = "udp://16.0.0.3:1024/p-1".parse().unwrap();
        let bytes = Writer::with_tag(7)
            .u16(513)
            .node_id(NodeId::from_u128(9))
            .opt_endpoint(Some(ep))
            .opt_node_id(None)
            .addresses(std::slice::from_ref(&addr))
            .finish();
        let mut r = Reader::new(&bytes);
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.u16().unwrap(), 513);
        assert_eq!(r.node_id().unwrap(), NodeId::from_u128(9));
        assert_eq!(r.opt_endpoint().unwrap(), Some(ep));
        assert_eq!(r.opt_node_id().unwrap(), None);
        assert_eq!(r.addresses().unwrap(), vec![addr]);
        r.finish().unwrap();
    }

    #[test]
    fn truncation_and_trailing_are_reported() {
        assert_eq!(Reader::new(&[1]).u16(), Err(DecodeError::Truncated));
        let mut r = Reader::new(&[1, 2]);
        r.u8().unwrap();
        assert_eq!(r.finish(), Err(DecodeError::Trailing(1)));
        assert_eq!(Reader::new(&[2]).bool(), Err(DecodeError::Invalid("boolean")));
    }
}
