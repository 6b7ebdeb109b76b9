use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::AddressError;

/// Number of bytes in a ring identifier.
pub const ID_BYTES: usize = 20;

/// A 160-bit unsigned integer, stored big-endian. Arithmetic wraps modulo 2^160.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct U160([u8; ID_BYTES]);

impl U160 {
    pub const ZERO: U160 = U160([0; ID_BYTES]);
    pub const MAX: U160 = U160([0xff; ID_BYTES]);

    pub const fn from_be_bytes(bytes: [u8; ID_BYTES]) -> Self {
        U160(bytes)
    }

    pub const fn to_be_bytes(self) -> [u8; ID_BYTES] {
        self.0
    }

    pub fn from_u128(v: u128) -> Self {
        let mut bytes = [0u8; ID_BYTES];
        bytes[4..].copy_from_slice(&v.to_be_bytes());
        U160(bytes)
    }

    pub fn wrapping_add(self, rhs: U160) -> U160 {
        let mut out = [0u8; ID_BYTES];
        let mut carry = 0u16;
        for i in (0..ID_BYTES).rev() {
            let s = self.0[i] as u16 + rhs.0[i] as u16 + carry;
            out[i] = s as u8;
            carry = s >> 8;
        }
        U160(out)
    }

    pub fn wrapping_sub(self, rhs: U160) -> U160 {
        let mut out = [0u8; ID_BYTES];
        let mut borrow = 0i16;
        for i in (0..ID_BYTES).rev() {
            let mut d = self.0[i] as i16 - rhs.0[i] as i16 - borrow;
            if d < 0 {
                d += 256;
                borrow = 1;
            } else {
                borrow = 0;
            }
            out[i] = d as u8;
        }
        U160(out)
    }

    pub fn wrapping_neg(self) -> U160 {
        U160::ZERO.wrapping_sub(self)
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0; ID_BYTES]
    }
}

impl fmt::Debug for U160 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Display for U160 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// Identifier of a peer on the 160-bit ring of one overlay instance.
///
/// The canonical text form is 40 lowercase hex digits, zero padded.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(U160);

impl NodeId {
    /// The all-zero identifier. Used on the wire as "identity not yet known".
    pub const ZERO: NodeId = NodeId(U160::ZERO);

    pub const fn from_bytes(bytes: [u8; ID_BYTES]) -> Self {
        NodeId(U160::from_be_bytes(bytes))
    }

    pub const fn to_bytes(self) -> [u8; ID_BYTES] {
        self.0.to_be_bytes()
    }

    pub fn from_u128(v: u128) -> Self {
        NodeId(U160::from_u128(v))
    }

    pub fn value(self) -> U160 {
        self.0
    }

    /// Draws a uniformly distributed identifier.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; ID_BYTES];
        rng.fill(&mut bytes[..]);
        NodeId::from_bytes(bytes)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    /// Distance travelled going clockwise (increasing ids) from `self` to `to`.
    pub fn clockwise_to(self, to: NodeId) -> U160 {
        to.0.wrapping_sub(self.0)
    }

    pub fn wrapping_add(self, delta: U160) -> NodeId {
        NodeId(self.0.wrapping_add(delta))
    }
}

/// `min(|a - b|, 2^160 - |a - b|)`.
pub fn ring_distance(a: NodeId, b: NodeId) -> U160 {
    let cw = a.clockwise_to(b);
    let ccw = b.clockwise_to(a);
    cw.min(ccw)
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", &hex::encode(self.to_bytes())[..8])
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.to_bytes()))
    }
}

impl FromStr for NodeId {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 2 * ID_BYTES {
            return Err(AddressError::MalformedNodeId(s.to_string()));
        }
        let mut bytes = [0u8; ID_BYTES];
        hex::decode_to_slice(s, &mut bytes)
            .map_err(|_| AddressError::MalformedNodeId(s.to_string()))?;
        Ok(NodeId::from_bytes(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(v: u128) -> NodeId {
        NodeId::from_u128(v)
    }

    fn max_id() -> NodeId {
        NodeId(U160::MAX)
    }

    #[test]
    fn distance_to_self_is_zero() {
        assert_eq!(ring_distance(id(77), id(77)), U160::ZERO);
    }

    #[test]
    fn distance_wraps_around_the_top() {
        // 2^160 - 1 is one step counter-clockwise from zero, two from one.
        assert_eq!(ring_distance(id(1), max_id()), U160::from_u128(2));
        assert_eq!(ring_distance(max_id(), id(1)), U160::from_u128(2));
    }

    #[test]
    fn hex_form_is_forty_lowercase_digits() {
        let text = id(0xabc).to_string();
        assert_eq!(text.len(), 40);
        assert_eq!(text, format!("{:0>40}", "abc"));
        assert_eq!(text.parse::<NodeId>().unwrap(), id(0xabc));
        assert!("ABC".parse::<NodeId>().is_err());
        assert!(format!("{:0>40}", "zz").parse::<NodeId>().is_err());
    }

    #[test]
    fn add_and_sub_wrap() {
        let one = U160::from_u128(1);
        assert_eq!(U160::MAX.wrapping_add(one), U160::ZERO);
        assert_eq!(U160::ZERO.wrapping_sub(one), U160::MAX);
    }

    fn arb_id() -> impl Strategy<Value = NodeId> {
        proptest::array::uniform20(any::<u8>()).prop_map(NodeId::from_bytes)
    }

    /// Digit-vector evaluation of min(|a-b|, 2^160-|a-b|) with an explicit 2^160 modulus.
    fn oracle_distance(a: NodeId, b: NodeId) -> Vec<u8> {
        // Represent as base-256 digit vectors with an extra leading digit.
        let to_vec = |x: NodeId| {
            let mut v = vec![0u8];
            v.extend_from_slice(&x.to_bytes());
            v
        };
        let (a, b) = (to_vec(a), to_vec(b));
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        let sub = |x: &[u8], y: &[u8]| {
            let mut out = vec![0u8; x.len()];
            let mut borrow = 0i32;
            for i in (0..x.len()).rev() {
                let mut d = x[i] as i32 - y[i] as i32 - borrow;
                borrow = if d < 0 { d += 256; 1 } else { 0 };
                out[i] = d as u8;
            }
            out
        };
        let diff = sub(&hi, &lo);
        let mut modulus = vec![0u8; 21];
        modulus[0] = 1;
        let other = sub(&modulus, &diff);
        let m = if diff <= other { diff } else { other };
        m[1..].to_vec()
    }

    proptest! {
        #[test]
        fn distance_matches_direct_formula(a in arb_id(), b in arb_id()) {
            prop_assert_eq!(ring_distance(a, b).to_be_bytes().to_vec(), oracle_distance(a, b));
        }

        #[test]
        fn distance_is_symmetric_and_triangular(a in arb_id(), b in arb_id(), c in arb_id()) {
            prop_assert_eq!(ring_distance(a, b), ring_distance(b, a));
            // each term is <= 2^159, so the sum only wraps when it reaches 2^160
            let lhs = ring_distance(a, c);
            let rhs = ring_distance(a, b).wrapping_add(ring_distance(b, c));
            let overflowed = rhs < ring_distance(a, b);
            prop_assert!(overflowed || lhs <= rhs);
        }
    }
}
