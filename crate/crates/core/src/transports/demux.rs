use std::collections::BTreeMap;

use crate::rendezvous::stun::is_stun_message;

use super::path::{decode_path_frame, validate_path};
use super::TransportError;

/// What an inbound datagram on a shared socket is for.
#[derive(Debug, PartialEq, Eq)]
pub enum Inbound<'a> {
    Stun(&'a [u8]),
    Overlay { slot: usize, inner: &'a [u8] },
    /// Unknown path or malformed prefix; already counted.
    Dropped,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DemuxStats {
    pub delivered: BTreeMap<String, u64>,
    pub stun: u64,
    pub unknown_path: u64,
    pub malformed: u64,
}

/// Path table for one socket. Slots are caller-chosen handler indices.
#[derive(Clone, Debug, Default)]
pub struct PathDemux {
    paths: BTreeMap<String, usize>,
    stats: DemuxStats,
}

impl PathDemux {
    pub fn new() -> Self {
        PathDemux::default()
    }

    pub fn register(&mut self, path: &str, slot: usize) -> Result<(), TransportError> {
        validate_path(path)?;
        if self.paths.contains_key(path) {
            return Err(TransportError::DuplicatePath(path.to_string()));
        }
        self.paths.insert(path.to_string(), slot);
        Ok(())
    }

    pub fn paths(&self) -> impl Iterator<Item = (&str, usize)> {
        self.paths.iter().map(|(p, s)| (p.as_str(), *s))
    }

    pub fn stats(&self) -> &DemuxStats {
        &self.stats
    }

    /// STUN is recognised first by its two zero bits and cookie; everything
    /// else must carry a registered path prefix.
    pub fn classify<'a>(&mut self, bytes: &'a [u8]) -> Inbound<'a> {
        if is_stun_message(bytes) {
            self.stats.stun += 1;
            return Inbound::Stun(bytes);
        }
        match decode_path_frame(bytes) {
            Ok((path, inner)) => match self.paths.get(path) {
                Some(&slot) => {
                    *self.stats.delivered.entry(path.to_string()).or_default() += 1;
                    Inbound::Overlay { slot, inner }
                }
                None => {
                    self.stats.unknown_path += 1;
                    Inbound::Dropped
                }
            },
            Err(_) => {
                self.stats.malformed += 1;
                Inbound::Dropped
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rendezvous::stun::StunMessage;
    use crate::simnet::Endpoint;
    use crate::transports::encode_path_frame;
    use proptest::prelude::*;

    #[test]
    fn duplicate_path_is_a_usage_error() {
        let mut d = PathDemux::new();
        d.register("/", 0).unwrap();
        assert_eq!(d.register("/", 1), Err(TransportError::DuplicatePath("/".into())));
    }

    #[test]
    fn unknown_path_counted() {
        let mut d = PathDemux::new();
        d.register("/", 0).unwrap();
        assert_eq!(d.classify(&encode_path_frame("/unknown", b"x")), Inbound::Dropped);
        assert_eq!(d.stats().unknown_path, 1);
    }

    #[test]
    fn stun_separates_from_overlay_frames() {
        let mut d = PathDemux::new();
        d.register("/", 0).unwrap();
        d.register("/priv1", 1).unwrap();
        let req = StunMessage::request([7; 12]).encode();
        assert!(matches!(d.classify(&req), Inbound::Stun(_)));
        let resp = StunMessage::response([7; 12], Endpoint::new([16, 0, 0, 1].into(), 1024)).encode();
        assert!(matches!(d.classify(&resp), Inbound::Stun(_)));
        assert_eq!(d.classify(&encode_path_frame("/priv1", b"hi")), Inbound::Overlay { slot: 1, inner: b"hi" });
        assert_eq!(d.stats().stun, 2);
    }

    proptest! {
        /// Overlay frames never pass as STUN, whatever their inner bytes.
        #[test]
        fn path_frames_never_look_like_stun(path in "/[!-~]{0,8}", inner in proptest::collection::vec(any::<u8>(), 0..64)) {
            prop_assert!(!is_stun_message(&encode_path_frame(&path, &inner)));
        }
    }
}
