use std::collections::BTreeMap;
use std::time::Duration;

use crate::identifiers::NodeId;
use crate::simnet::SimTime;

use super::DhtError;

pub const MAX_VALUE_BYTES: usize = 1024;
pub const MIN_TTL_SECS: u32 = 1;
pub const MAX_TTL_SECS: u32 = 3600;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeaseEntry {
    pub key: NodeId,
    pub value: Vec<u8>,
    pub expires_at: SimTime,
    pub origin: NodeId,
}

pub fn check_put(value: &[u8], ttl_secs: u32) -> Result<(), DhtError> {
    if !(MIN_TTL_SECS..=MAX_TTL_SECS).contains(&ttl_secs) {
        return Err(DhtError::TtlOutOfRange(ttl_secs));
    }
    if value.len() > MAX_VALUE_BYTES {
        return Err(DhtError::ValueTooLarge(value.len()));
    }
    Ok(())
}

/// Values per key, each with its own lease. A key holds one entry per distinct value.
#[derive(Clone, Debug, Default)]
pub struct LeaseStore {
    entries: BTreeMap<NodeId, Vec<LeaseEntry>>,
}

impl LeaseStore {
    pub fn new() -> Self {
        LeaseStore::default()
    }

    /// Stores `value` under `key` until `now + ttl`. Re-putting a stored value
    /// keeps one entry with the later expiry.
    pub fn put(&mut self, now: SimTime, key: NodeId, value: Vec<u8>, ttl_secs: u32, origin: NodeId) -> Result<(), DhtError> {
        check_put(&value, ttl_secs)?;
        let expires_at = now + Duration::from_secs(ttl_secs as u64);
        let list = self.entries.entry(key).or_default();
        match list.iter_mut().find(|e| e.value == value) {
            Some(e) => {
                if expires_at > e.expires_at {
                    e.expires_at = expires_at;
                    e.origin = origin;
                }
            }
            None => list.push(LeaseEntry { key, value, expires_at, origin }),
        }
        Ok(())
    }

    /// Unexpired values under `key`, oldest insertion first.
    pub fn get(&self, now: SimTime, key: &NodeId) -> Vec<Vec<u8>> {
        self.entries
            .get(key)
            .map(|l| l.iter().filter(|e| e.expires_at > now).map(|e| e.value.clone()).collect())
            .unwrap_or_default()
    }

    /// Drops entries with `expires_at <= now`; returns how many went.
    pub fn sweep(&mut self, now: SimTime) -> usize {
        let mut removed = 0;
        self.entries.retain(|_, list| {
            let before = list.len();
            list.retain(|e| e.expires_at > now);
            removed += before - list.len();
            !list.is_empty()
        });
        removed
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.keys().copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = &LeaseEntry> {
        self.entries.values().flatten()
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
    fn two_origins_keep_both_values() {
        let mut s = LeaseStore::new();
        s.put(SimTime::ZERO, id(1), b"a".to_vec(), 60, id(10)).unwrap();
        s.put(SimTime::ZERO, id(1), b"b".to_vec(), 60, id(11)).unwrap();
        assert_eq!(s.get(SimTime::ZERO, &id(1)), vec![b"a".to_vec(), b"b".to_vec()]);
    }

    #[test]
    fn identical_put_extends_single_entry() {
        let mut s = LeaseStore::new();
        s.put(SimTime::ZERO, id(1), b"a".to_vec(), 10, id(10)).unwrap();
        s.put(SimTime::from_secs(5), id(1), b"a".to_vec(), 10, id(10)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.entries().next().unwrap().expires_at, SimTime::from_secs(15));
        // a shorter lease never shortens the entry
        s.put(SimTime::from_secs(6), id(1), b"a".to_vec(), 1, id(10)).unwrap();
        assert_eq!(s.entries().next().unwrap().expires_at, SimTime::from_secs(15));
    }

    #[test]
    fn never_put_key_is_empty_and_sweep_of_nothing_is_zero() {
        let mut s = LeaseStore::new();
        assert!(s.get(SimTime::ZERO, &id(3)).is_empty());
        assert_eq!(s.sweep(SimTime::from_secs(100)), 0);
    }

    #[test]
    fn short_lease_gone_after_sweep() {
        let mut s = LeaseStore::new();
        s.put(SimTime::ZERO, id(1), b"a".to_vec(), 2, id(10)).unwrap();
        assert_eq!(s.sweep(SimTime::from_secs(1)), 0);
        assert_eq!(s.sweep(SimTime::from_secs(3)), 1);
        assert!(s.is_empty());
    }

    #[test]
    fn mass_expiry_in_one_sweep() {
        let mut s = LeaseStore::new();
        for i in 0..100u128 {
            s.put(SimTime::ZERO, id(i % 7), i.to_be_bytes().to_vec(), 5, id(i)).unwrap();
        }
        assert_eq!(s.len(), 100);
        assert_eq!(s.sweep(SimTime::from_secs(5)), 100);
    }

    #[test]
    fn limits_are_enforced() {
        let mut s = LeaseStore::new();
        assert_eq!(s.put(SimTime::ZERO, id(1), vec![], 0, id(1)), Err(DhtError::TtlOutOfRange(0)));
        assert_eq!(s.put(SimTime::ZERO, id(1), vec![], 3601, id(1)), Err(DhtError::TtlOutOfRange(3601)));
        assert_eq!(s.put(SimTime::ZERO, id(1), vec![0; 1025], 1, id(1)), Err(DhtError::ValueTooLarge(1025)));
        assert!(s.put(SimTime::ZERO, id(1), vec![0; 1024], 3600, id(1)).is_ok());
    }

    proptest! {
        #[test]
        fn distinct_values_never_overwrite(vals in proptest::collection::btree_set(any::<u16>(), 1..30), ttl in 1u32..100) {
            let mut s = LeaseStore::new();
            for (i, v) in vals.iter().enumerate() {
                s.put(SimTime::from_secs(i as u64), id(7), v.to_be_bytes().to_vec(), ttl + vals.len() as u32, id(i as u128)).unwrap();
            }
            let now = SimTime::from_secs(vals.len() as u64 - 1);
            prop_assert_eq!(s.get(now, &id(7)).len(), vals.len());
        }

        #[test]
        fn nothing_outlives_its_lease(puts in proptest::collection::vec((0u64..50, 1u32..30, any::<u8>()), 1..40)) {
            let mut s = LeaseStore::new();
            let mut latest = SimTime::ZERO;
            for (at, ttl, v) in &puts {
                let now = SimTime::from_secs(*at);
                s.put(now, id(*v as u128 % 3), vec![*v], *ttl, id(1)).unwrap();
                latest = latest.max(now + Duration::from_secs(*ttl as u64));
            }
            for e in s.entries() {
                prop_assert!(e.expires_at <= latest);
            }
            s.sweep(latest);
            prop_assert!(s.is_empty());
        }
    }
}
