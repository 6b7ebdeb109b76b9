//! Address list value: `count:u16 (len:u16 utf8-address)*`, canonical address text.

use crate::codec::{DecodeError, Reader, Writer};
use crate::identifiers::TransportAddress;

pub fn encode_addresses(list: &[TransportAddress]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u16(list.len() as u16);
    for a in list {
        w.address(a);
    }
    w.finish()
}

pub fn decode_addresses(bytes: &[u8]) -> Result<Vec<TransportAddress>, DecodeError> {
    let mut r = Reader::new(bytes);
    let n = r.u16()?;
    let list = (0..n).map(|_| r.address()).collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identifiers::NodeId;

    #[test]
    fn round_trip_mixed_schemes() {
        let list = vec![
            "udp://16.0.0.4:1024/p-0011aabb".parse().unwrap(),
            TransportAddress::brunet(NodeId::from_u128(77)),
            TransportAddress::xmpp("alice", "a.example", "00ff.0102030405060708").unwrap(),
        ];
        let bytes = encode_addresses(&list);
        assert_eq!(&bytes[..2], &[0, 3]);
        assert_eq!(decode_addresses(&bytes).unwrap(), list);
    }

    #[test]
    fn rejects_trailing_and_garbage() {
        assert!(decode_addresses(&[0, 0, 1]).is_err());
        assert!(decode_addresses(&[0, 1, 0, 3, b'a', b'b', b'c']).is_err());
        assert_eq!(decode_addresses(&[0, 0]).unwrap(), vec![]);
    }
}
