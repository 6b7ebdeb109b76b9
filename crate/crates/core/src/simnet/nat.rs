use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Endpoint, SimTime};

/// Lowest external port handed out by a NAT device.
pub const FIRST_EXTERNAL_PORT: u16 = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NatType {
    FullCone,
    RestrictedCone,
    PortRestrictedCone,
    Symmetric,
}

impl NatType {
    pub const ALL: [NatType; 4] = [
        NatType::FullCone,
        NatType::RestrictedCone,
        NatType::PortRestrictedCone,
        NatType::Symmetric,
    ];

    pub fn is_cone(self) -> bool {
        !matches!(self, NatType::Symmetric)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NatType::FullCone => "full-cone",
            NatType::RestrictedCone => "restricted-cone",
            NatType::PortRestrictedCone => "port-restricted-cone",
            NatType::Symmetric => "symmetric",
        }
    }
}

impl fmt::Display for NatType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NatType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NatType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown NAT type {s:?}"))
    }
}

/// A remote admitted through a binding: by address alone or address and port.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Permit {
    Ip(Ipv4Addr),
    Endpoint(Endpoint),
}

/// One translation entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NatBinding {
    pub internal: Endpoint,
    /// Set only on symmetric devices, whose bindings are per destination.
    pub remote_key: Option<Endpoint>,
    pub external: Endpoint,
    pub permitted: BTreeSet<Permit>,
    pub expires_at: SimTime,
}

impl NatBinding {
    fn admits(&self, nat: NatType, src: Endpoint) -> bool {
        match nat {
            NatType::FullCone => true,
            NatType::RestrictedCone => self.permitted.contains(&Permit::Ip(src.ip)),
            NatType::PortRestrictedCone => self.permitted.contains(&Permit::Endpoint(src)),
            NatType::Symmetric => self.remote_key == Some(src),
        }
    }
}

/// Outcome of presenting an inbound datagram to a NAT.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InboundVerdict {
    Deliver(Endpoint),
    /// No live binding owns the destination port.
    NoBinding,
    /// A binding exists but its type rule rejects the source.
    Filtered,
}

/// A NAT device with a single external address.
#[derive(Clone, Debug)]
pub struct NatDevice {
    nat_type: NatType,
    external_ip: Ipv4Addr,
    mapping_ttl: Duration,
    hairpin: bool,
    last_port: u16,
    bindings: Vec<NatBinding>,
}

impl NatDevice {
    pub fn new(nat_type: NatType, external_ip: Ipv4Addr, mapping_ttl: Duration, hairpin: bool) -> Self {
        NatDevice { nat_type, external_ip, mapping_ttl, hairpin, last_port: u16::MAX, bindings: Vec::new() }
    }

    /// Restricts external ports to `FIRST_EXTERNAL_PORT..=last_port`.
    pub fn with_last_port(mut self, last_port: u16) -> Self {
        self.last_port = last_port.max(FIRST_EXTERNAL_PORT);
        self
    }

    pub fn nat_type(&self) -> NatType {
        self.nat_type
    }

    pub fn external_ip(&self) -> Ipv4Addr {
        self.external_ip
    }

    pub fn hairpin(&self) -> bool {
        self.hairpin
    }

    pub fn set_hairpin(&mut self, on: bool) {
        self.hairpin = on;
    }

    pub fn mapping_ttl(&self) -> Duration {
        self.mapping_ttl
    }

    /// Live bindings at `now`.
    pub fn bindings(&self, now: SimTime) -> impl Iterator<Item = &NatBinding> {
        self.bindings.iter().filter(move |b| b.expires_at > now)
    }

    fn purge(&mut self, now: SimTime) {
        self.bindings.retain(|b| b.expires_at > now);
    }

    /// Translates an outbound datagram's source. Returns `None` when the
    /// external port space is exhausted.
    pub fn outbound(&mut self, now: SimTime, internal: Endpoint, remote: Endpoint) -> Option<Endpoint> {
        self.purge(now);
        let nat = self.nat_type;
        let key = (nat == NatType::Symmetric).then_some(remote);
        let idx = match self
            .bindings
            .iter()
            .position(|b| b.internal == internal && b.remote_key == key)
        {
            Some(i) => i,
            None => {
                let port = self.lowest_free_port()?;
                self.bindings.push(NatBinding {
                    internal,
                    remote_key: key,
                    external: Endpoint::new(self.external_ip, port),
                    permitted: BTreeSet::new(),
                    expires_at: now,
                });
                self.bindings.len() - 1
            }
        };
        let ttl = self.mapping_ttl;
        let binding = &mut self.bindings[idx];
        match nat {
            NatType::FullCone => {}
            NatType::RestrictedCone => {
                binding.permitted.insert(Permit::Ip(remote.ip));
            }
            NatType::PortRestrictedCone | NatType::Symmetric => {
                binding.permitted.insert(Permit::Endpoint(remote));
            }
        }
        binding.expires_at = now + ttl;
        Some(binding.external)
    }

    /// Filters an inbound datagram addressed to `external` from `src`.
    pub fn inbound(&self, now: SimTime, src: Endpoint, external: Endpoint) -> InboundVerdict {
        if external.ip != self.external_ip {
            return InboundVerdict::NoBinding;
        }
        let Some(binding) = self
            .bindings
            .iter()
            .find(|b| b.external == external && b.expires_at > now)
        else {
            return InboundVerdict::NoBinding;
        };
        if binding.admits(self.nat_type, src) {
            InboundVerdict::Deliver(binding.internal)
        } else {
            InboundVerdict::Filtered
        }
    }

    fn lowest_free_port(&self) -> Option<u16> {
        let used: BTreeSet<u16> = self.bindings.iter().map(|b| b.external.port).collect();
        (FIRST_EXTERNAL_PORT..=self.last_port).find(|p| !used.contains(p))
    }
}
