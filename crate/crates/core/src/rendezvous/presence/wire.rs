//! Presence frames. Strings are `len:u16 utf8`.
//!
//! ```text
//! client -> server   Bind 0x01 account resource | Iq 0x02 id:u32 to payload:bytes16
//!                    KeepAlive 0x03 | Unbind 0x04
//! server -> client   Bound 0x11 jid | Presence 0x12 from online:u8
//!                    Iq 0x13 id:u32 from payload:bytes16 | IqError 0x14 id:u32 to
//!                    BindError 0x15 reason
//! server -> server   Presence 0x21 from to online:u8 | Probe 0x22 from to
//!                    Iq 0x23 id:u32 from to payload:bytes16 | IqError 0x24 id:u32 from to
//! ```
//!
//! Server-to-server `to` is a bare account (fan out to its sessions) or a
//! full identifier (that session only).

use crate::codec::{DecodeError, Reader, Writer};

/// Longest full identifier, `user@domain/resource`.
pub const MAX_JID_BYTES: usize = 1023;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Frame {
    Bind { account: String, resource: String },
    ClientIq { id: u32, to: String, payload: Vec<u8> },
    KeepAlive,
    Unbind,
    Bound { jid: String },
    Presence { from: String, online: bool },
    Iq { id: u32, from: String, payload: Vec<u8> },
    IqError { id: u32, to: String },
    BindError { reason: String },
    S2sPresence { from: String, to: String, online: bool },
    S2sProbe { from: String, to: String },
    S2sIq { id: u32, from: String, to: String, payload: Vec<u8> },
    S2sIqError { id: u32, from: String, to: String },
}

fn s(w: &mut Writer, v: &str) {
    w.bytes16(v.as_bytes());
}

fn rs(r: &mut Reader<'_>) -> Result<String, DecodeError> {
    Ok(r.str16()?.to_string())
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut w;
        match self {
            Frame::Bind { account, resource } => {
                w = Writer::with_tag(0x01);
                s(&mut w, account);
                s(&mut w, resource);
            }
            Frame::ClientIq { id, to, payload } => {
                w = Writer::with_tag(0x02);
                w.u32(*id);
                s(&mut w, to);
                w.bytes16(payload);
            }
            Frame::KeepAlive => w = Writer::with_tag(0x03),
            Frame::Unbind => w = Writer::with_tag(0x04),
            Frame::Bound { jid } => {
                w = Writer::with_tag(0x11);
                s(&mut w, jid);
            }
            Frame::Presence { from, online } => {
                w = Writer::with_tag(0x12);
                s(&mut w, from);
                w.bool(*online);
            }
            Frame::Iq { id, from, payload } => {
                w = Writer::with_tag(0x13);
                w.u32(*id);
                s(&mut w, from);
                w.bytes16(payload);
            }
            Frame::IqError { id, to } => {
                w = Writer::with_tag(0x14);
                w.u32(*id);
                s(&mut w, to);
            }
            Frame::BindError { reason } => {
                w = Writer::with_tag(0x15);
                s(&mut w, reason);
            }
            Frame::S2sPresence { from, to, online } => {
                w = Writer::with_tag(0x21);
                s(&mut w, from);
                s(&mut w, to);
                w.bool(*online);
            }
            Frame::S2sProbe { from, to } => {
                w = Writer::with_tag(0x22);
                s(&mut w, from);
                s(&mut w, to);
            }
            Frame::S2sIq { id, from, to, payload } => {
                w = Writer::with_tag(0x23);
                w.u32(*id);
                s(&mut w, from);
                s(&mut w, to);
                w.bytes16(payload);
            }
            Frame::S2sIqError { id, from, to } => {
                w = Writer::with_tag(0x24);
                w.u32(*id);
                s(&mut w, from);
                s(&mut w, to);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let f = match r.u8()? {
            0x01 => Frame::Bind { account: rs(&mut r)?, resource: rs(&mut r)? },
            0x02 => Frame::ClientIq { id: r.u32()?, to: rs(&mut r)?, payload: r.bytes16()?.to_vec() },
            0x03 => Frame::KeepAlive,
            0x04 => Frame::Unbind,
            0x11 => Frame::Bound { jid: rs(&mut r)? },
            0x12 => Frame::Presence { from: rs(&mut r)?, online: r.bool()? },
            0x13 => Frame::Iq { id: r.u32()?, from: rs(&mut r)?, payload: r.bytes16()?.to_vec() },
            0x14 => Frame::IqError { id: r.u32()?, to: rs(&mut r)? },
            0x15 => Frame::BindError { reason: rs(&mut r)? },
            0x21 => Frame::S2sPresence { from: rs(&mut r)?, to: rs(&mut r)?, online: r.bool()? },
            0x22 => Frame::S2sProbe { from: rs(&mut r)?, to: rs(&mut r)? },
            0x23 => Frame::S2sIq { id: r.u32()?, from: rs(&mut r)?, to: rs(&mut r)?, payload: r.bytes16()?.to_vec() },
            0x24 => Frame::S2sIqError { id: r.u32()?, from: rs(&mut r)?, to: rs(&mut r)? },
            t => return Err(DecodeError::UnknownTag(t)),
        };
        r.finish()?;
        Ok(f)
    }
}

/// `(user, domain, resource)` of `user@domain[/resource]`.
pub fn split_jid(jid: &str) -> Option<(&str, &str, Option<&str>)> {
    let (bare, resource) = match jid.split_once('/') {
        Some((b, r)) => (b, Some(r)),
        None => (jid, None),
    };
    let (user, domain) = bare.split_once('@')?;
    (!user.is_empty() && !domain.is_empty()).then_some((user, domain, resource))
}

pub fn bare_jid(jid: &str) -> &str {
    jid.split_once('/').map_or(jid, |(b, _)| b)
}

/// Application payloads carried in IQs between presence providers.
///
/// ```text
/// AddressRequest 0x01 | AddressReply 0x02 address-list | OverlayFrame 0x03 frame
/// ```
pub mod iq {
    pub const ADDRESS_REQUEST: u8 = 0x01;
    pub const ADDRESS_REPLY: u8 = 0x02;
    pub const OVERLAY_FRAME: u8 = 0x03;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_every_frame() {
        let frames = vec![
            Frame::Bind { account: "a@x".into(), resource: "r".into() },
            Frame::ClientIq { id: 3, to: "b@y/r".into(), payload: vec![1, 2] },
            Frame::KeepAlive,
            Frame::Unbind,
            Frame::Bound { jid: "a@x/r".into() },
            Frame::Presence { from: "a@x/r".into(), online: true },
            Frame::Iq { id: 9, from: "a@x/r".into(), payload: vec![] },
            Frame::IqError { id: 9, to: "b@y/r".into() },
            Frame::BindError { reason: "no such account".into() },
            Frame::S2sPresence { from: "a@x/r".into(), to: "b@y".into(), online: false },
            Frame::S2sProbe { from: "a@x/r".into(), to: "b@y".into() },
            Frame::S2sIq { id: 1, from: "a@x/r".into(), to: "b@y/s".into(), payload: vec![7] },
            Frame::S2sIqError { id: 1, from: "a@x/r".into(), to: "b@y/s".into() },
        ];
        for f in frames {
            assert_eq!(Frame::decode(&f.encode()).unwrap(), f);
        }
    }

    #[test]
    fn jid_parts() {
        assert_eq!(split_jid("a@x/r.1"), Some(("a", "x", Some("r.1"))));
        assert_eq!(split_jid("a@x"), Some(("a", "x", None)));
        assert_eq!(split_jid("ax"), None);
        assert_eq!(bare_jid("a@x/r"), "a@x");
    }
}
